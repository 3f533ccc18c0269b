//! Config resolution for the `wdp` binary.
//!
//! A run is configured from three layers, strongest first: command line
//! flags, the `WDP_OUT` environment variable (output directory only), and a
//! `key = value` config file. Anything left unset falls back to the built-in
//! defaults. Every key in the file has a flag of the same name in kebab case,
//! so `batch_size = 256` and `--batch-size 256` are interchangeable.
//!
//! Each run writes two manifests next to its outputs: `config.resolved`, the
//! fully resolved config in the same syntax the parser accepts, and
//! `seeds.used`, every seed the run consumes. Re-running from
//! `config.resolved` reproduces the run byte for byte.

use std::ffi::OsStr;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use wdp_core::nets::NoiseMode;
use wdp_core::seed::{self, stream};
use wdp_core::SweepConfig;

/// Flags shared by every subcommand, mirroring the config-file keys.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file with `key = value` lines; `#` starts a comment.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory (overrides WDP_OUT and the config file).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Latent dimension of one image code.
    #[arg(long)]
    pub d: Option<usize>,

    /// Number of generator blocks.
    #[arg(long)]
    pub m: Option<usize>,

    /// Rows per generator block.
    #[arg(long)]
    pub k: Option<usize>,

    /// Leading latent coordinates shared with the common segment.
    #[arg(long)]
    pub shared_count: Option<usize>,

    /// Comma-separated indices of the protected blocks.
    #[arg(long, value_name = "LIST")]
    pub private_idx: Option<String>,

    /// Seed for the frozen generator weights.
    #[arg(long)]
    pub model_seed: Option<u64>,

    /// Seed for the evaluation set and channel draws.
    #[arg(long)]
    pub eval_seed: Option<u64>,

    /// Training latents sampled from the prior.
    #[arg(long)]
    pub train_size: Option<usize>,

    /// Evaluation images per budget.
    #[arg(long)]
    pub test_size: Option<usize>,

    /// Comma-separated privacy budgets to sweep.
    #[arg(long, value_name = "LIST")]
    pub epsilons: Option<String>,

    /// Lower clipping quantile.
    #[arg(long)]
    pub q_low: Option<f64>,

    /// Upper clipping quantile.
    #[arg(long)]
    pub q_high: Option<f64>,

    /// Evaluation channel SNR in dB.
    #[arg(long)]
    pub snr_db: Option<f64>,

    /// Mean transmit power per symbol.
    #[arg(long)]
    pub power: Option<f64>,

    /// Training channel SNR in dB (`inf` for a noiseless channel).
    #[arg(long)]
    pub train_snr_db: Option<f64>,

    /// Privacy loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Base learning rate.
    #[arg(long)]
    pub lr0: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// First cosine cycle length in epochs.
    #[arg(long)]
    pub t0: Option<usize>,

    /// Cycle length multiplier after each warm restart.
    #[arg(long)]
    pub t_mult: Option<usize>,

    /// Noise targets per budget: `cached` (fixed) or `fresh` (resampled).
    #[arg(long, value_name = "MODE")]
    pub noise_mode: Option<String>,

    /// Seed for shuffling, init, and noise draws during training.
    #[arg(long)]
    pub train_seed: Option<u64>,

    /// Iteration cap for latent inversion.
    #[arg(long)]
    pub inv_max_iters: Option<usize>,

    /// Gradient step size for latent inversion.
    #[arg(long)]
    pub inv_step_size: Option<f64>,

    /// Pixel MSE at which inversion stops.
    #[arg(long)]
    pub inv_tol: Option<f64>,

    /// Cosine similarity cap for identity matching.
    #[arg(long)]
    pub match_threshold: Option<f64>,

    /// Reconstructed images written per budget and party.
    #[arg(long)]
    pub dump_images: Option<usize>,

    /// Worker threads for evaluation (1 = fully sequential).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A validated config plus the directory the run writes into.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: SweepConfig,
    pub out: PathBuf,
}

/// Builds the effective config from defaults, the config file, `WDP_OUT`,
/// and flags, then validates it. All failures here are config errors.
pub fn resolve(args: &CommonArgs, env_out: Option<&OsStr>) -> Result<Resolved, String> {
    let mut cfg = SweepConfig::default();
    let mut out: Option<PathBuf> = None;

    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        parse_into(&text, &mut cfg, &mut out)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(dir) = env_out {
        out = Some(PathBuf::from(dir));
    }
    apply_flags(args, &mut cfg, &mut out)?;

    let out = out.ok_or_else(|| {
        "no output directory: pass --out, set WDP_OUT, or add `out = DIR` to the config file"
            .to_string()
    })?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(Resolved { cfg, out })
}

/// Parses `key = value` lines into `cfg`. Unknown keys and unparseable
/// values are reported with the key name and 1-based line number.
pub fn parse_into(
    text: &str,
    cfg: &mut SweepConfig,
    out: &mut Option<PathBuf>,
) -> Result<(), String> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", idx + 1))?;
        apply_key(cfg, out, key.trim(), value.trim())
            .map_err(|e| format!("line {}: {e}", idx + 1))?;
    }
    Ok(())
}

fn apply_key(
    cfg: &mut SweepConfig,
    out: &mut Option<PathBuf>,
    key: &str,
    value: &str,
) -> Result<(), String> {
    match key {
        "d" => cfg.d = num(key, value)?,
        "m" => cfg.m = num(key, value)?,
        "k" => cfg.k = num(key, value)?,
        "shared_count" => cfg.shared_count = num(key, value)?,
        "private_idx" => cfg.private_idx = list(key, value)?,
        "model_seed" => cfg.model_seed = num(key, value)?,
        "eval_seed" => cfg.eval_seed = num(key, value)?,
        "train_size" => cfg.train_size = num(key, value)?,
        "test_size" => cfg.test_size = num(key, value)?,
        "epsilons" => cfg.epsilons = list(key, value)?,
        "q_low" => cfg.q_low = num(key, value)?,
        "q_high" => cfg.q_high = num(key, value)?,
        "snr_db" => cfg.channel.snr_db = num(key, value)?,
        "power" => cfg.channel.power = num(key, value)?,
        "train_snr_db" => cfg.train_snr_db = num(key, value)?,
        "lambda" => cfg.train.lambda = num(key, value)?,
        "lr0" => cfg.train.lr0 = num(key, value)?,
        "epochs" => cfg.train.epochs = num(key, value)?,
        "batch_size" => cfg.train.batch_size = num(key, value)?,
        "t0" => cfg.train.t0 = num(key, value)?,
        "t_mult" => cfg.train.t_mult = num(key, value)?,
        "noise_mode" => cfg.train.noise_mode = noise_mode(value)?,
        "train_seed" => cfg.train.seed = num(key, value)?,
        "inv_max_iters" => cfg.inversion.max_iters = num(key, value)?,
        "inv_step_size" => cfg.inversion.step_size = num(key, value)?,
        "inv_tol" => cfg.inversion.tol = num(key, value)?,
        "match_threshold" => cfg.match_threshold = num(key, value)?,
        "dump_images" => cfg.dump_images = num(key, value)?,
        "threads" => cfg.threads = num(key, value)?,
        "out" => *out = Some(PathBuf::from(value)),
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

fn apply_flags(
    args: &CommonArgs,
    cfg: &mut SweepConfig,
    out: &mut Option<PathBuf>,
) -> Result<(), String> {
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(args.d => cfg.d);
    set!(args.m => cfg.m);
    set!(args.k => cfg.k);
    set!(args.shared_count => cfg.shared_count);
    set!(args.model_seed => cfg.model_seed);
    set!(args.eval_seed => cfg.eval_seed);
    set!(args.train_size => cfg.train_size);
    set!(args.test_size => cfg.test_size);
    set!(args.q_low => cfg.q_low);
    set!(args.q_high => cfg.q_high);
    set!(args.snr_db => cfg.channel.snr_db);
    set!(args.power => cfg.channel.power);
    set!(args.train_snr_db => cfg.train_snr_db);
    set!(args.lambda => cfg.train.lambda);
    set!(args.lr0 => cfg.train.lr0);
    set!(args.epochs => cfg.train.epochs);
    set!(args.batch_size => cfg.train.batch_size);
    set!(args.t0 => cfg.train.t0);
    set!(args.t_mult => cfg.train.t_mult);
    set!(args.train_seed => cfg.train.seed);
    set!(args.inv_max_iters => cfg.inversion.max_iters);
    set!(args.inv_step_size => cfg.inversion.step_size);
    set!(args.inv_tol => cfg.inversion.tol);
    set!(args.match_threshold => cfg.match_threshold);
    set!(args.dump_images => cfg.dump_images);
    set!(args.threads => cfg.threads);
    if let Some(s) = &args.private_idx {
        cfg.private_idx = list("private_idx", s)?;
    }
    if let Some(s) = &args.epsilons {
        cfg.epsilons = list("epsilons", s)?;
    }
    if let Some(s) = &args.noise_mode {
        cfg.train.noise_mode = noise_mode(s)?;
    }
    if let Some(p) = &args.out {
        *out = Some(p.clone());
    }
    Ok(())
}

fn num<T>(key: &str, value: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value for `{key}`: {e}"))
}

fn list<T>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value.split(',').map(|part| num(key, part.trim())).collect()
}

fn noise_mode(value: &str) -> Result<NoiseMode, String> {
    match value {
        "cached" => Ok(NoiseMode::Cached),
        "fresh" => Ok(NoiseMode::Fresh),
        other => Err(format!(
            "invalid value for `noise_mode`: expected `cached` or `fresh`, got `{other}`"
        )),
    }
}

/// Renders the resolved config in the syntax `parse_into` accepts.
pub fn render(cfg: &SweepConfig, out: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "d = {}", cfg.d);
    let _ = writeln!(s, "m = {}", cfg.m);
    let _ = writeln!(s, "k = {}", cfg.k);
    let _ = writeln!(s, "shared_count = {}", cfg.shared_count);
    let _ = writeln!(s, "private_idx = {}", join(&cfg.private_idx));
    let _ = writeln!(s, "model_seed = {}", cfg.model_seed);
    let _ = writeln!(s, "eval_seed = {}", cfg.eval_seed);
    let _ = writeln!(s, "train_size = {}", cfg.train_size);
    let _ = writeln!(s, "test_size = {}", cfg.test_size);
    let _ = writeln!(s, "epsilons = {}", join(&cfg.epsilons));
    let _ = writeln!(s, "q_low = {}", cfg.q_low);
    let _ = writeln!(s, "q_high = {}", cfg.q_high);
    let _ = writeln!(s, "snr_db = {}", cfg.channel.snr_db);
    let _ = writeln!(s, "power = {}", cfg.channel.power);
    let _ = writeln!(s, "train_snr_db = {}", cfg.train_snr_db);
    let _ = writeln!(s, "lambda = {}", cfg.train.lambda);
    let _ = writeln!(s, "lr0 = {}", cfg.train.lr0);
    let _ = writeln!(s, "epochs = {}", cfg.train.epochs);
    let _ = writeln!(s, "batch_size = {}", cfg.train.batch_size);
    let _ = writeln!(s, "t0 = {}", cfg.train.t0);
    let _ = writeln!(s, "t_mult = {}", cfg.train.t_mult);
    let mode = match cfg.train.noise_mode {
        NoiseMode::Cached => "cached",
        NoiseMode::Fresh => "fresh",
    };
    let _ = writeln!(s, "noise_mode = {mode}");
    let _ = writeln!(s, "train_seed = {}", cfg.train.seed);
    let _ = writeln!(s, "inv_max_iters = {}", cfg.inversion.max_iters);
    let _ = writeln!(s, "inv_step_size = {}", cfg.inversion.step_size);
    let _ = writeln!(s, "inv_tol = {}", cfg.inversion.tol);
    let _ = writeln!(s, "match_threshold = {}", cfg.match_threshold);
    let _ = writeln!(s, "dump_images = {}", cfg.dump_images);
    let _ = writeln!(s, "threads = {}", cfg.threads);
    let _ = writeln!(s, "out = {}", out.display());
    s
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Lists every seed the run consumes: the three base seeds and the
/// per-budget training seeds derived from `train_seed`.
pub fn seeds_manifest(cfg: &SweepConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model_seed = {}", cfg.model_seed);
    let _ = writeln!(s, "eval_seed = {}", cfg.eval_seed);
    let _ = writeln!(s, "train_seed = {}", cfg.train.seed);
    for &eps in &cfg.epsilons {
        let derived = seed::derive(cfg.train.seed, stream::TRAIN_EPS, eps.to_bits());
        let _ = writeln!(s, "train_seed_eps_{eps} = {derived}");
    }
    s
}

/// Writes `config.resolved` and `seeds.used` into the output directory,
/// creating it first.
pub fn write_manifests(r: &Resolved) -> std::io::Result<()> {
    fs::create_dir_all(&r.out)?;
    fs::write(r.out.join("config.resolved"), render(&r.cfg, &r.out))?;
    fs::write(r.out.join("seeds.used"), seeds_manifest(&r.cfg))?;
    Ok(())
}
