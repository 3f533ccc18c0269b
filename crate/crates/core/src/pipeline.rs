//! End-to-end transmission flow and the privacy-budget sweep experiment.
//!
//! A transmitter inverts an image to latent codes, protects the private rows,
//! and sends the full latent over a noisy channel. The legitimate receiver
//! deprotects and regenerates; the eavesdropper regenerates directly from
//! what it hears. The sweep trains one protection pair per privacy budget,
//! evaluates both parties over a held-out test set, and reports MSE, PSNR, an
//! identity-match rate proxy, and the budget implied by the learned fake
//! noise.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::channel::{transmit, ChannelConfig};
use crate::dp::{
    approximate_epsilon, compute_clip_bounds, fit_laplace_scale, quantile_sorted,
    sensitivity_closed_form, DpParams,
};
use crate::error::{Error, Result};
use crate::latent::{
    combine, generate, invert, partition, pgm_dims, sample_latents, GeneratorModel, Image,
    InversionConfig, LatentCodes,
};
use crate::nets::{
    deprotect, load_checkpoint, protect, save_checkpoint, train, AffineNet, TrainConfig,
};
use crate::seed::{self, stream};

/// Everything a sweep run needs. Model and data sizes default to a
/// desk-scale layout; training hyperparameters default to the values the
/// evaluation protocol was tuned with.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub shared_count: usize,
    pub private_idx: Vec<usize>,
    pub model_seed: u64,
    pub eval_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub epsilons: Vec<f64>,
    pub q_low: f64,
    pub q_high: f64,
    pub channel: ChannelConfig,
    /// SNR of the channel emulated while training the net pair. Defaults to
    /// noiseless: with affine nets a noisy training channel teaches the
    /// deprotection linear-MMSE shrinkage and a power-allocation bias that an
    /// unprotected link cannot express, letting the protected system beat the
    /// baseline it is supposed to approach from below.
    pub train_snr_db: f64,
    pub train: TrainConfig,
    pub inversion: InversionConfig,
    /// Cosine similarity cap for identity matching; calibration lowers it if
    /// the clean baseline cannot reach a 95% match rate under it.
    pub match_threshold: f64,
    /// Reconstructed images written per budget and party (0 disables dumps).
    pub dump_images: usize,
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d: 96,
            m: 8,
            k: 16,
            shared_count: 2,
            private_idx: vec![0, 1, 3, 4, 5, 6],
            model_seed: 42,
            eval_seed: 2024,
            train_size: 16384,
            test_size: 500,
            epsilons: vec![1.0, 3.0, 5.0, 8.0, 10.0, 15.0, 30.0, 100.0, 300.0, 800.0],
            q_low: 0.005,
            q_high: 0.995,
            channel: ChannelConfig::default(),
            train_snr_db: f64::INFINITY,
            train: TrainConfig {
                seed: 1337,
                ..TrainConfig::default()
            },
            inversion: InversionConfig::default(),
            match_threshold: 0.9,
            dump_images: 8,
            threads: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, details: String| Error::InvalidValue {
            what: what.into(),
            details,
        };
        crate::latent::validate_private_idx(self.m, &self.private_idx)?;
        self.train.validate()?;
        if self.epsilons.is_empty() {
            return Err(Error::EmptyInput { context: "epsilon list" });
        }
        for &e in &self.epsilons {
            if !e.is_finite() || e <= 0.0 {
                return Err(bad("epsilons", format!("must be finite and positive, got {e}")));
            }
        }
        for w in self.epsilons.windows(2) {
            if w[1] <= w[0] {
                return Err(bad(
                    "epsilons",
                    format!("must be strictly increasing, got {} after {}", w[1], w[0]),
                ));
            }
        }
        if self.train_size == 0 {
            return Err(bad("train_size", "must be at least 1".into()));
        }
        if self.test_size == 0 {
            return Err(bad("test_size", "must be at least 1".into()));
        }
        if !(self.match_threshold > 0.0 && self.match_threshold < 1.0) {
            return Err(bad(
                "match_threshold",
                format!("must be in (0,1), got {}", self.match_threshold),
            ));
        }
        if self.threads == 0 {
            return Err(bad("threads", "must be at least 1".into()));
        }
        if self.train_snr_db.is_nan() {
            return Err(bad("train_snr_db", "must not be NaN".into()));
        }
        if !(self.q_low >= 0.0 && self.q_low < self.q_high && self.q_high <= 1.0) {
            return Err(bad(
                "quantiles",
                format!("need 0 <= q_low < q_high <= 1, got {} and {}", self.q_low, self.q_high),
            ));
        }
        Ok(())
    }
}

/// The fixed parts of a transmission: generator, optional net pair, privacy
/// parameters for the fitted-budget metric, channel, inversion settings, and
/// the identity threshold. `protection = None` is the unprotected baseline.
#[derive(Debug, Clone)]
pub struct System<'a> {
    pub model: &'a GeneratorModel,
    pub protection: Option<&'a AffineNet>,
    pub deprotection: Option<&'a AffineNet>,
    pub private_idx: &'a [usize],
    pub dp: DpParams,
    pub channel: ChannelConfig,
    pub inversion: InversionConfig,
    pub match_threshold: f64,
}

/// Channel seeds for one image; the two parties draw independent noise.
#[derive(Debug, Clone, Copy)]
pub struct ImageSeeds {
    pub bob: u64,
    pub eve: u64,
}

impl ImageSeeds {
    /// Per-image seeds derived from the evaluation seed. Fixed per image
    /// index, not per budget, so every sweep row sees identical channel draws
    /// and row-to-row differences isolate the protection nets. Both parties
    /// share one realization per image: their links are statistically
    /// identical, and pairing the draws means the Bob-versus-Eve gap measures
    /// the protection itself rather than channel luck.
    #[must_use]
    pub fn derive(eval_seed: u64, img_idx: u64) -> Self {
        let shared = seed::derive(eval_seed, stream::CHANNEL_BOB, img_idx);
        Self {
            bob: shared,
            eve: shared,
        }
    }
}

/// Per-image outcome for both parties.
#[derive(Debug, Clone)]
pub struct TransmissionResult {
    pub x_hat_bob: Image,
    pub x_hat_eve: Image,
    /// Budget implied by the fake noise this image carried; infinite for the
    /// baseline, which carries none.
    pub epsilon_prime: f64,
    pub recon_mse_bob: f64,
    pub recon_mse_eve: f64,
    pub psnr_bob: f64,
    pub psnr_eve: f64,
    pub identity_match_bob: bool,
    pub identity_match_eve: bool,
}

/// A test image with its inversion embedding precomputed, so repeated
/// evaluations against different net pairs skip the reference inversion.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub image: Image,
    pub embedding: LatentCodes,
    /// MSE between the image and its regeneration from the embedding.
    pub inversion_mse: f64,
}

/// Generates the image for `z` and inverts it back to a reference embedding.
pub fn prepare_image(
    model: &GeneratorModel,
    z: &Array2<f64>,
    inversion: &InversionConfig,
    private_idx: &[usize],
) -> Result<EvalImage> {
    let codes = LatentCodes::new(z.clone(), private_idx.to_vec())?;
    let image = generate(model, &codes)?;
    let embedding = invert(model, &image, inversion, private_idx)?;
    let regen = generate(model, &embedding)?;
    let inversion_mse = image.mse(&regen)?;
    Ok(EvalImage {
        image,
        embedding,
        inversion_mse,
    })
}

#[must_use]
pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

/// Cosine similarity of two flattened code matrices.
pub fn embedding_cosine(a: &LatentCodes, b: &LatentCodes) -> Result<f64> {
    if a.codes.dim() != b.codes.dim() {
        return Err(Error::DimensionMismatch {
            context: "embedding cosine",
            expected: format!("{:?}", a.codes.dim()),
            got: format!("{:?}", b.codes.dim()),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.codes.iter().zip(b.codes.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidValue {
            what: "embedding".into(),
            details: "zero-norm embedding has no direction".into(),
        });
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    if !cos.is_finite() {
        return Err(Error::NonFiniteMetric { context: "embedding cosine" });
    }
    Ok(cos)
}

/// True iff the two images embed to latents with cosine similarity at or
/// above `threshold`: the stand-in for a face identity check.
pub fn identity_match(
    x_src: &Image,
    x_rec: &Image,
    model: &GeneratorModel,
    inversion: &InversionConfig,
    threshold: f64,
) -> Result<bool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidValue {
            what: "threshold".into(),
            details: format!("must be in (0,1), got {threshold}"),
        });
    }
    let idx: Vec<usize> = (0..model.m).collect();
    let ea = invert(model, x_src, inversion, &idx)?;
    let eb = invert(model, x_rec, inversion, &idx)?;
    Ok(embedding_cosine(&ea, &eb)? >= threshold)
}

/// Fraction of results without an identity match.
#[must_use]
pub fn fppsr(matches: &[bool]) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    matches.iter().filter(|&&m| !m).count() as f64 / matches.len() as f64
}

/// Largest threshold not above `cap` at which at least 95% of the baseline
/// similarities qualify as matches: the 5th percentile of the calibration
/// cosines, clamped to `cap`.
pub fn calibrate_threshold(baseline_cosines: &[f64], cap: f64) -> Result<f64> {
    if baseline_cosines.is_empty() {
        return Err(Error::EmptyInput { context: "threshold calibration" });
    }
    if baseline_cosines.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMetric { context: "threshold calibration" });
    }
    let mut sorted = baseline_cosines.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&sorted, 0.05).min(cap))
}

/// Transmission outcome before the identity threshold is applied; the sweep
/// needs raw cosines to calibrate the threshold from the baseline first.
#[derive(Debug, Clone)]
struct RawTransmission {
    x_hat_bob: Image,
    x_hat_eve: Image,
    mse_bob: f64,
    mse_eve: f64,
    cos_bob: f64,
    cos_eve: f64,
    /// Protected minus plain private codes, flattened.
    fake: Vec<f64>,
}

fn check_finite(value: f64, context: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteMetric { context })
    }
}

fn transmit_prepared(prep: &EvalImage, sys: &System, seeds: ImageSeeds) -> Result<RawTransmission> {
    let (z_p, z_c) = partition(&prep.embedding);
    let o = match sys.protection {
        Some(net) => protect(net, &z_p)?,
        None => z_p.clone(),
    };
    let fake: Vec<f64> = o.iter().zip(z_p.iter()).map(|(a, b)| a - b).collect();
    let z2 = combine(&o, &z_c, &prep.embedding.private_idx)?;
    let flat: Vec<f64> = z2.codes.iter().copied().collect();

    let y_bob = transmit(&flat, &sys.channel, seeds.bob)?;
    let y_eve = transmit(&flat, &sys.channel, seeds.eve)?;
    let (m, k) = z2.codes.dim();
    let to_codes = |v: Vec<f64>| -> Result<LatentCodes> {
        let codes = Array2::from_shape_vec((m, k), v).expect("channel preserves length");
        LatentCodes::new(codes, prep.embedding.private_idx.clone())
    };

    // Legitimate receiver: undo the protection on the private rows, then
    // regenerate from the full latent.
    let received = to_codes(y_bob)?;
    let (y_p, y_c) = partition(&received);
    let s = match sys.deprotection {
        Some(net) => deprotect(net, &y_p)?,
        None => y_p,
    };
    let z1 = combine(&s, &y_c, &prep.embedding.private_idx)?;
    let x_hat_bob = generate(sys.model, &z1)?;

    // Eavesdropper regenerates from the raw reception.
    let x_hat_eve = generate(sys.model, &to_codes(y_eve)?)?;

    let mse_bob = check_finite(prep.image.mse(&x_hat_bob)?, "bob reconstruction mse")?;
    let mse_eve = check_finite(prep.image.mse(&x_hat_eve)?, "eve reconstruction mse")?;
    let emb_bob = invert(sys.model, &x_hat_bob, &sys.inversion, &prep.embedding.private_idx)?;
    let emb_eve = invert(sys.model, &x_hat_eve, &sys.inversion, &prep.embedding.private_idx)?;
    let cos_bob = embedding_cosine(&prep.embedding, &emb_bob)?;
    let cos_eve = embedding_cosine(&prep.embedding, &emb_eve)?;

    Ok(RawTransmission {
        x_hat_bob,
        x_hat_eve,
        mse_bob,
        mse_eve,
        cos_bob,
        cos_eve,
        fake,
    })
}

fn finish(raw: RawTransmission, sys: &System) -> Result<TransmissionResult> {
    let fit = fit_laplace_scale(&raw.fake)?;
    let epsilon_prime = approximate_epsilon(&fit, sys.dp.delta_f);
    let psnr_bob = check_finite(psnr_from_mse(raw.mse_bob), "bob psnr")?;
    let psnr_eve = check_finite(psnr_from_mse(raw.mse_eve), "eve psnr")?;
    Ok(TransmissionResult {
        x_hat_bob: raw.x_hat_bob,
        x_hat_eve: raw.x_hat_eve,
        epsilon_prime,
        recon_mse_bob: raw.mse_bob,
        recon_mse_eve: raw.mse_eve,
        psnr_bob,
        psnr_eve,
        identity_match_bob: raw.cos_bob >= sys.match_threshold,
        identity_match_eve: raw.cos_eve >= sys.match_threshold,
    })
}

/// Runs the full per-image flow: invert, protect, transmit to both parties,
/// deprotect and regenerate, and score.
pub fn transmit_image(x: &Image, sys: &System, seeds: ImageSeeds) -> Result<TransmissionResult> {
    let prep = prepare_image_from_pixels(sys.model, x, &sys.inversion, sys.private_idx)?;
    let raw = transmit_prepared(&prep, sys, seeds)?;
    finish(raw, sys)
}

fn prepare_image_from_pixels(
    model: &GeneratorModel,
    x: &Image,
    inversion: &InversionConfig,
    private_idx: &[usize],
) -> Result<EvalImage> {
    let embedding = invert(model, x, inversion, private_idx)?;
    let regen = generate(model, &embedding)?;
    let inversion_mse = x.mse(&regen)?;
    Ok(EvalImage {
        image: x.clone(),
        embedding,
        inversion_mse,
    })
}

/// One aggregate report row: means over the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub mse_bob: f64,
    pub mse_eve: f64,
    pub psnr_bob: f64,
    pub psnr_eve: f64,
    pub fppsr_bob: f64,
    pub fppsr_eve: f64,
    pub is_baseline: bool,
}

/// Sweep output: one row per budget (ascending) plus the baseline row last,
/// and the identity threshold the run calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub threshold: f64,
}

pub const CSV_HEADER: &str =
    "epsilon,epsilon_prime,mse_bob,mse_eve,psnr_bob,psnr_eve,fppsr_bob,fppsr_eve,is_baseline";

impl SweepReport {
    /// Fixed 6-decimal CSV; the baseline row prints epsilon 0 and an
    /// infinite implied budget as "inf".
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let eps = if row.is_baseline { 0.0 } else { row.epsilon };
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                eps,
                row.epsilon_prime,
                row.mse_bob,
                row.mse_eve,
                row.psnr_bob,
                row.psnr_eve,
                row.fppsr_bob,
                row.fppsr_eve,
                u8::from(row.is_baseline),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Formats a budget for file names: integers without a decimal point.
#[must_use]
pub fn format_eps(eps: f64) -> String {
    if eps.fract() == 0.0 && eps.abs() < 1e15 {
        format!("{eps:.0}")
    } else {
        format!("{eps}")
    }
}

#[must_use]
pub fn checkpoint_path(dir: &Path, eps: f64) -> PathBuf {
    dir.join(format!("eps_{}.wdpc", format_eps(eps)))
}

/// Checkpoint handling policy for `run_sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Load a checkpoint when present, train and save otherwise.
    TrainIfMissing,
    /// Never train; fail listing every budget without a checkpoint.
    RequireCheckpoints,
    /// Always retrain and overwrite.
    ForceTrain,
}

struct Prepared {
    model: GeneratorModel,
    images: Vec<EvalImage>,
    dp_by_eps: Vec<DpParams>,
    delta_f: f64,
    train_latents: Vec<Array2<f64>>,
}

fn prepare_run(cfg: &SweepConfig) -> Result<Prepared> {
    cfg.validate()?;
    let model = GeneratorModel::seeded(cfg.d, cfg.m, cfg.k, cfg.shared_count, cfg.model_seed)?;

    let train_latents = sample_latents(
        cfg.train_size,
        cfg.m,
        cfg.k,
        seed::derive(cfg.train.seed, stream::DATASET_TRAIN, 0),
    );
    let clip = compute_clip_bounds(&train_latents, cfg.q_low, cfg.q_high)?;
    let delta_f = sensitivity_closed_form(&clip, cfg.m * cfg.k);
    let dp_by_eps = cfg
        .epsilons
        .iter()
        .map(|&e| DpParams::new(e, delta_f))
        .collect::<Result<Vec<_>>>()?;

    let test_latents = sample_latents(
        cfg.test_size,
        cfg.m,
        cfg.k,
        seed::derive(cfg.eval_seed, stream::DATASET_TEST, 0),
    );
    let images = map_maybe_parallel(cfg.threads, &test_latents, |z| {
        prepare_image(&model, z, &cfg.inversion, &cfg.private_idx)
    })?;

    Ok(Prepared {
        model,
        images,
        dp_by_eps,
        delta_f,
        train_latents,
    })
}

/// Applies `f` to every item, in parallel when `threads > 1`, returning
/// results in input order either way.
fn map_maybe_parallel<T: Sync, U: Send, F>(threads: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if threads <= 1 {
        items.iter().map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidValue {
                what: "threads".into(),
                details: e.to_string(),
            })?;
        pool.install(|| items.par_iter().map(f).collect())
    }
}

fn eval_system(
    cfg: &SweepConfig,
    prepared: &Prepared,
    pair: Option<(&AffineNet, &AffineNet)>,
    dp: &DpParams,
) -> Result<Vec<RawTransmission>> {
    let sys = System {
        model: &prepared.model,
        protection: pair.map(|(p, _)| p),
        deprotection: pair.map(|(_, q)| q),
        private_idx: &cfg.private_idx,
        dp: *dp,
        channel: cfg.channel,
        inversion: cfg.inversion,
        match_threshold: cfg.match_threshold,
    };
    let indexed: Vec<(usize, &EvalImage)> = prepared.images.iter().enumerate().collect();
    map_maybe_parallel(cfg.threads, &indexed, |(idx, prep)| {
        transmit_prepared(prep, &sys, ImageSeeds::derive(cfg.eval_seed, *idx as u64))
    })
}

fn summarize(
    epsilon: f64,
    raws: &[RawTransmission],
    threshold: f64,
    delta_f: f64,
    is_baseline: bool,
) -> Result<SweepRow> {
    let n = raws.len() as f64;
    let mse_bob = raws.iter().map(|r| r.mse_bob).sum::<f64>() / n;
    let mse_eve = raws.iter().map(|r| r.mse_eve).sum::<f64>() / n;
    // Pool every image's fake noise into one fit; per-image fits are noisy at
    // this dimension.
    let pooled: Vec<f64> = raws.iter().flat_map(|r| r.fake.iter().copied()).collect();
    let epsilon_prime = approximate_epsilon(&fit_laplace_scale(&pooled)?, delta_f);
    let match_bob: Vec<bool> = raws.iter().map(|r| r.cos_bob >= threshold).collect();
    let match_eve: Vec<bool> = raws.iter().map(|r| r.cos_eve >= threshold).collect();
    Ok(SweepRow {
        epsilon,
        epsilon_prime,
        mse_bob,
        mse_eve,
        psnr_bob: check_finite(psnr_from_mse(mse_bob), "row psnr bob")?,
        psnr_eve: check_finite(psnr_from_mse(mse_eve), "row psnr eve")?,
        fppsr_bob: fppsr(&match_bob),
        fppsr_eve: fppsr(&match_eve),
        is_baseline,
    })
}

fn dump_pgms(out_dir: &Path, label: &str, raws: &[RawTransmission], count: usize, d: usize) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let (w, h) = pgm_dims(d);
    for party in ["bob", "eve"] {
        let dir = out_dir.join(label).join(party);
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (idx, raw) in raws.iter().take(count).enumerate() {
            let img = if party == "bob" { &raw.x_hat_bob } else { &raw.x_hat_eve };
            img.write_pgm(&dir.join(format!("img_{idx}.pgm")), w, h)?;
        }
    }
    Ok(())
}

/// Writes one loss-per-epoch CSV next to a checkpoint.
fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        text.push_str(&format!("{i},{l:.9}\n"));
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Trains (or loads) one pair per budget under `ckpt_dir`.
///
/// Per-budget training seeds derive from the budget's bit pattern, so adding
/// or removing budgets never changes another budget's checkpoint.
pub fn ensure_checkpoints(
    cfg: &SweepConfig,
    prepared_train: (&[Array2<f64>], f64),
    ckpt_dir: &Path,
    mode: TrainMode,
) -> Result<Vec<(AffineNet, AffineNet)>> {
    let (train_latents, delta_f) = prepared_train;
    std::fs::create_dir_all(ckpt_dir).map_err(|source| Error::Io {
        path: ckpt_dir.display().to_string(),
        source,
    })?;
    if mode == TrainMode::RequireCheckpoints {
        let missing: Vec<f64> = cfg
            .epsilons
            .iter()
            .copied()
            .filter(|&e| !checkpoint_path(ckpt_dir, e).exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingCheckpoints { epsilons: missing });
        }
    }
    let mut pairs = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let path = checkpoint_path(ckpt_dir, eps);
        let pair = if mode != TrainMode::ForceTrain && path.exists() {
            let (p, q) = load_checkpoint(&path)?;
            if p.dim() != cfg.private_idx.len() * cfg.k {
                return Err(Error::BadFormat {
                    path: path.display().to_string(),
                    details: format!(
                        "checkpoint dimension {} does not match private layout {}",
                        p.dim(),
                        cfg.private_idx.len() * cfg.k
                    ),
                });
            }
            (p, q)
        } else {
            let train_cfg = TrainConfig {
                seed: seed::derive(cfg.train.seed, stream::TRAIN_EPS, eps.to_bits()),
                ..cfg.train
            };
            let dp = DpParams::new(eps, delta_f)?;
            let train_channel = ChannelConfig {
                snr_db: cfg.train_snr_db,
                ..cfg.channel
            };
            let trained = train(train_latents, &cfg.private_idx, &dp, &train_channel, &train_cfg)?;
            eprintln!(
                "trained eps {}: final loss {:.6e}",
                format_eps(eps),
                trained.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            save_checkpoint(&path, &trained.protection, &trained.deprotection, &train_cfg)?;
            write_loss_curve(
                &ckpt_dir.join(format!("eps_{}.loss.csv", format_eps(eps))),
                &trained.loss_curve,
            )?;
            (trained.protection, trained.deprotection)
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Full experiment: train or load one pair per budget, evaluate every budget
/// and the unprotected baseline over the same test set and channel draws,
/// calibrate the identity threshold on the baseline, and write the report
/// CSV plus optional image dumps under `out_dir`.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path, mode: TrainMode) -> Result<SweepReport> {
    let prepared = prepare_run(cfg)?;
    let ckpt_dir = out_dir.join("train");
    let pairs = ensure_checkpoints(
        cfg,
        (&prepared.train_latents, prepared.delta_f),
        &ckpt_dir,
        mode,
    )?;

    // The baseline runs first: its cosines set the identity threshold used
    // by every row.
    let baseline_dp = DpParams::new(1.0, prepared.delta_f)?;
    let baseline_raws = eval_system(cfg, &prepared, None, &baseline_dp)?;
    let baseline_cosines: Vec<f64> = baseline_raws.iter().map(|r| r.cos_bob).collect();
    let threshold = calibrate_threshold(&baseline_cosines, cfg.match_threshold)?;

    let mut rows = Vec::with_capacity(cfg.epsilons.len() + 1);
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let (p, q) = &pairs[i];
        let raws = eval_system(cfg, &prepared, Some((p, q)), &prepared.dp_by_eps[i])?;
        rows.push(summarize(eps, &raws, threshold, prepared.delta_f, false)?);
        dump_pgms(out_dir, &format!("eps_{}", format_eps(eps)), &raws, cfg.dump_images, cfg.d)?;
    }
    rows.push(summarize(0.0, &baseline_raws, threshold, prepared.delta_f, true)?);
    dump_pgms(out_dir, "baseline", &baseline_raws, cfg.dump_images, cfg.d)?;

    let report = SweepReport { rows, threshold };
    report.write_csv(&out_dir.join("report.csv"))?;
    Ok(report)
}

/// Baseline-only run: direct transmission with no protection and no privacy
/// noise, both parties on equal channels.
pub fn run_baseline(cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepReport> {
    let prepared = prepare_run(cfg)?;
    let dp = DpParams::new(1.0, prepared.delta_f)?;
    let raws = eval_system(cfg, &prepared, None, &dp)?;
    let cosines: Vec<f64> = raws.iter().map(|r| r.cos_bob).collect();
    let threshold = calibrate_threshold(&cosines, cfg.match_threshold)?;
    let row = summarize(0.0, &raws, threshold, prepared.delta_f, true)?;
    let report = SweepReport { rows: vec![row], threshold };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        dump_pgms(dir, "baseline", &raws, cfg.dump_images, cfg.d)?;
        report.write_csv(&dir.join("baseline.csv"))?;
    }
    Ok(report)
}

/// Trains or refreshes the per-budget checkpoints under `out_dir/train`
/// without preparing or touching an evaluation set.
pub fn run_train(cfg: &SweepConfig, out_dir: &Path, mode: TrainMode) -> Result<()> {
    cfg.validate()?;
    let train_latents = sample_latents(
        cfg.train_size,
        cfg.m,
        cfg.k,
        seed::derive(cfg.train.seed, stream::DATASET_TRAIN, 0),
    );
    let clip = compute_clip_bounds(&train_latents, cfg.q_low, cfg.q_high)?;
    let delta_f = sensitivity_closed_form(&clip, cfg.m * cfg.k);
    ensure_checkpoints(cfg, (&train_latents, delta_f), &out_dir.join("train"), mode)?;
    Ok(())
}

/// Per-image evaluation rows against existing checkpoints; one CSV per
/// budget under `out_dir`, columns img_idx and the per-image metrics.
pub fn run_eval(cfg: &SweepConfig, out_dir: &Path, ckpt_dir: &Path, mode: TrainMode) -> Result<()> {
    let prepared = prepare_run(cfg)?;
    let pairs = ensure_checkpoints(
        cfg,
        (&prepared.train_latents, prepared.delta_f),
        ckpt_dir,
        mode,
    )?;
    let baseline_dp = DpParams::new(1.0, prepared.delta_f)?;
    let baseline_raws = eval_system(cfg, &prepared, None, &baseline_dp)?;
    let cosines: Vec<f64> = baseline_raws.iter().map(|r| r.cos_bob).collect();
    let threshold = calibrate_threshold(&cosines, cfg.match_threshold)?;

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let (p, q) = &pairs[i];
        let raws = eval_system(cfg, &prepared, Some((p, q)), &prepared.dp_by_eps[i])?;
        let mut text = String::from(
            "img_idx,epsilon_prime,mse_bob,mse_eve,psnr_bob,psnr_eve,match_bob,match_eve\n",
        );
        for (idx, raw) in raws.iter().enumerate() {
            let fit = fit_laplace_scale(&raw.fake)?;
            let eps_prime = approximate_epsilon(&fit, prepared.delta_f);
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                idx,
                eps_prime,
                raw.mse_bob,
                raw.mse_eve,
                check_finite(psnr_from_mse(raw.mse_bob), "per-image psnr")?,
                check_finite(psnr_from_mse(raw.mse_eve), "per-image psnr")?,
                u8::from(raw.cos_bob >= threshold),
                u8::from(raw.cos_eve >= threshold),
            ));
        }
        let path = out_dir.join(format!("eval_eps_{}.csv", format_eps(eps)));
        std::fs::write(&path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
