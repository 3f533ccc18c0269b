//! Trainable affine protection and deprotection nets.
//!
//! The protection net maps the flattened private codes through a single affine
//! layer before transmission; the deprotection net inverts it at the
//! legitimate receiver. Training minimizes reconstruction error of the full
//! latent through a simulated channel plus a weighted mismatch between the
//! protected codes and a Laplace-perturbed copy of the private codes, so the
//! learned transform trades fidelity for noise mimicry. Gradients are derived
//! by hand (everything is affine); channel and privacy noise are treated as
//! constants in the backward pass. Updates use Adam under a cosine annealing
//! schedule with warm restarts.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::dp::{sample_laplace, DpParams};
use crate::error::{Error, Result};
use crate::latent::validate_private_idx;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetRole {
    Protection,
    Deprotection,
}

/// Single affine layer y = W x + b on flattened private codes.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNet {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub role: NetRole,
}

impl AffineNet {
    #[must_use]
    pub fn identity(d: usize, role: NetRole) -> Self {
        Self {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
            role,
        }
    }

    /// W = I + noise_scale * G with standard normal G, b = 0. Starts near
    /// passthrough, which is near-optimal at large budgets and keeps early
    /// training stable at small ones.
    #[must_use]
    pub fn scaled_identity(d: usize, role: NetRole, noise_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weight = Array2::eye(d);
        for v in weight.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += noise_scale * g;
        }
        Self {
            weight,
            bias: Array1::zeros(d),
            role,
        }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the layer to a batch, one flattened sample per row.
    pub fn apply_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "affine net input",
                expected: self.dim().to_string(),
                got: x.ncols().to_string(),
            });
        }
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        Ok(out)
    }

    fn apply_codes(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let (rows, k) = z.dim();
        if rows * k != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "affine net codes",
                expected: self.dim().to_string(),
                got: format!("{rows}x{k}"),
            });
        }
        let flat = Array1::from_iter(z.iter().copied());
        let out = self.weight.dot(&flat) + &self.bias;
        Ok(Array2::from_shape_vec((rows, k), out.to_vec()).expect("shape preserved"))
    }
}

/// Protection forward pass on private code rows.
pub fn protect(net: &AffineNet, z_private: &Array2<f64>) -> Result<Array2<f64>> {
    if net.role != NetRole::Protection {
        return Err(Error::RoleMismatch {
            expected: NetRole::Protection,
            got: net.role,
        });
    }
    net.apply_codes(z_private)
}

/// Deprotection forward pass on received private code rows.
pub fn deprotect(net: &AffineNet, y_private: &Array2<f64>) -> Result<Array2<f64>> {
    if net.role != NetRole::Deprotection {
        return Err(Error::RoleMismatch {
            expected: NetRole::Deprotection,
            got: net.role,
        });
    }
    net.apply_codes(y_private)
}

fn mean_sq(diff: &Array2<f64>) -> f64 {
    diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
}

/// Per-sample training objective: per-element mean squared reconstruction
/// error of the full latent, plus `lambda` times the summed squared mismatch
/// between the privacy target and the protected codes.
///
/// The imitation term is deliberately a raw sum: normalized per element it
/// is two orders of magnitude weaker than the mini-batch sampling noise in
/// the reconstruction gradient, and under normalized (Adam) updates the
/// protection weights then random-walk instead of tracking the privacy
/// target, erasing any dependence on the budget.
pub fn training_loss(
    z: &Array2<f64>,
    s1: &Array2<f64>,
    z1_private: &Array2<f64>,
    z2_private: &Array2<f64>,
    lambda: f64,
) -> Result<f64> {
    if z.dim() != s1.dim() {
        return Err(Error::DimensionMismatch {
            context: "loss full latent",
            expected: format!("{:?}", z.dim()),
            got: format!("{:?}", s1.dim()),
        });
    }
    if z1_private.dim() != z2_private.dim() {
        return Err(Error::DimensionMismatch {
            context: "loss private parts",
            expected: format!("{:?}", z1_private.dim()),
            got: format!("{:?}", z2_private.dim()),
        });
    }
    let mismatch: f64 = (z1_private - z2_private).iter().map(|v| v * v).sum();
    Ok(mean_sq(&(z - s1)) + lambda * mismatch)
}

/// How the per-sample privacy targets are realized during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// One draw per sample of both the Laplace targets and the channel
    /// noise, fixed for the whole run (default). A deterministic net can
    /// imitate a fixed perturbation of its input, but redrawing targets
    /// every epoch averages them to the identity and trains the protection
    /// away to nothing; redrawing channel noise every step random-walks the
    /// protection weights under normalized updates.
    Cached,
    /// Redraw both per sample every epoch.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// First cosine cycle length in epochs.
    pub t0: usize,
    /// Cycle length multiplier after each restart.
    pub t_mult: usize,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            lr0: 3e-4,
            epochs: 100,
            batch_size: 512,
            t0: 10,
            t_mult: 2,
            noise_mode: NoiseMode::Cached,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, details: String| Error::InvalidValue {
            what: what.into(),
            details,
        };
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(bad("lambda", format!("must be finite and nonnegative, got {}", self.lambda)));
        }
        if !self.lr0.is_finite() || self.lr0 < 0.0 {
            return Err(bad("lr0", format!("must be finite and nonnegative, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        if self.t0 == 0 {
            return Err(bad("t0", "must be at least 1".into()));
        }
        if self.t_mult == 0 {
            return Err(bad("t_mult", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cosine annealing with warm restarts, floor 0: within a cycle of length T,
/// lr(t) = lr0 * (1 + cos(pi t / T)) / 2; each restart resets t to 0 and
/// multiplies T by `t_mult`.
#[must_use]
pub fn lr_at(lr0: f64, t0: usize, t_mult: usize, epoch: usize) -> f64 {
    let mut cycle_len = t0.max(1);
    let mut start = 0usize;
    while start + cycle_len <= epoch {
        start += cycle_len;
        cycle_len *= t_mult.max(1);
    }
    let t = (epoch - start) as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * t / cycle_len as f64).cos())
}

/// One training batch with all randomness materialized: per-sample rows of
/// flattened private codes, common codes, privacy targets, and channel noise
/// (private columns first, then common). Holding the noise here keeps the
/// loss a deterministic function of the weights, which is what the gradient
/// derivation assumes and what finite-difference checks require.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub xp: Array2<f64>,
    pub xc: Array2<f64>,
    pub targets: Array2<f64>,
    pub noise: Array2<f64>,
}

impl TrainBatch {
    fn validate(&self, d: usize) -> Result<()> {
        let b = self.xp.nrows();
        let c = self.xc.ncols();
        let ok = self.xp.ncols() == d
            && self.targets.dim() == (b, d)
            && self.xc.nrows() == b
            && self.noise.dim() == (b, d + c);
        if !ok {
            return Err(Error::DimensionMismatch {
                context: "train batch",
                expected: format!("xp {b}x{d}, targets {b}x{d}, noise {b}x{}", d + c),
                got: format!(
                    "xp {:?}, xc {:?}, targets {:?}, noise {:?}",
                    self.xp.dim(),
                    self.xc.dim(),
                    self.targets.dim(),
                    self.noise.dim()
                ),
            });
        }
        Ok(())
    }
}

/// Parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct Grads {
    pub wp: Array2<f64>,
    pub bp: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
}

fn forward_parts(
    protection: &AffineNet,
    deprotection: &AffineNet,
    batch: &TrainBatch,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let d = protection.dim();
    batch.validate(d)?;
    let o = protection.apply_batch(&batch.xp)?;
    let yp = &o + &batch.noise.slice(ndarray::s![.., ..d]);
    let sp = deprotection.apply_batch(&yp)?;
    Ok((o, yp, sp))
}

/// Batch loss under fixed noise realizations; mean of per-sample losses.
pub fn batch_loss(
    protection: &AffineNet,
    deprotection: &AffineNet,
    batch: &TrainBatch,
    lambda: f64,
) -> Result<f64> {
    let d = protection.dim();
    let (o, _, sp) = forward_parts(protection, deprotection, batch)?;
    let b = batch.xp.nrows() as f64;
    let l_total = (d + batch.xc.ncols()) as f64;
    let recon_private: f64 = (&batch.xp - &sp).iter().map(|v| v * v).sum();
    let recon_common: f64 = batch
        .noise
        .slice(ndarray::s![.., d..])
        .iter()
        .map(|v| v * v)
        .sum();
    let privacy: f64 = (&batch.targets - &o).iter().map(|v| v * v).sum();
    Ok((recon_private + recon_common) / (b * l_total) + lambda * privacy / b)
}

/// Batch loss and hand-derived gradients for both nets.
pub fn batch_gradients(
    protection: &AffineNet,
    deprotection: &AffineNet,
    batch: &TrainBatch,
    lambda: f64,
) -> Result<(f64, Grads)> {
    let d = protection.dim();
    let (o, yp, sp) = forward_parts(protection, deprotection, batch)?;
    let b = batch.xp.nrows() as f64;
    let l_total = (d + batch.xc.ncols()) as f64;

    let recon_private: f64 = (&sp - &batch.xp).iter().map(|v| v * v).sum();
    let recon_common: f64 = batch
        .noise
        .slice(ndarray::s![.., d..])
        .iter()
        .map(|v| v * v)
        .sum();
    let privacy: f64 = (&batch.targets - &o).iter().map(|v| v * v).sum();
    let loss = (recon_private + recon_common) / (b * l_total) + lambda * privacy / b;

    // d loss / d sp
    let g_sp = (&sp - &batch.xp) * (2.0 / (b * l_total));
    let wq = g_sp.t().dot(&yp);
    let bq = g_sp.sum_axis(Axis(0));
    // Chain through deprotection, then add the privacy term's pull on o.
    let g_o = g_sp.dot(&deprotection.weight) + (&o - &batch.targets) * (2.0 * lambda / b);
    let wp = g_o.t().dot(&batch.xp);
    let bp = g_o.sum_axis(Axis(0));
    Ok((loss, Grads { wp, bp, wq, bq }))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    m: Array2<f64>,
    v: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl Moments {
    fn zeros(d: usize) -> Self {
        Self {
            m: Array2::zeros((d, d)),
            v: Array2::zeros((d, d)),
            mb: Array1::zeros(d),
            vb: Array1::zeros(d),
        }
    }
}

/// Training state: the two nets plus Adam moments and the step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub protection: AffineNet,
    pub deprotection: AffineNet,
    prot_moments: Moments,
    deprot_moments: Moments,
    step_count: u64,
}

fn adam_update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    t: u64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        });
}

fn adam_update_bias(
    param: &mut Array1<f64>,
    grad: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    t: u64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
        });
}

impl Trainer {
    pub fn new(protection: AffineNet, deprotection: AffineNet) -> Result<Self> {
        if protection.role != NetRole::Protection {
            return Err(Error::RoleMismatch {
                expected: NetRole::Protection,
                got: protection.role,
            });
        }
        if deprotection.role != NetRole::Deprotection {
            return Err(Error::RoleMismatch {
                expected: NetRole::Deprotection,
                got: deprotection.role,
            });
        }
        if protection.dim() != deprotection.dim() {
            return Err(Error::DimensionMismatch {
                context: "trainer net dims",
                expected: protection.dim().to_string(),
                got: deprotection.dim().to_string(),
            });
        }
        let d = protection.dim();
        Ok(Self {
            protection,
            deprotection,
            prot_moments: Moments::zeros(d),
            deprot_moments: Moments::zeros(d),
            step_count: 0,
        })
    }

    /// One update on a batch whose noise is already materialized.
    /// With `lr = 0` the parameters are unchanged bit for bit.
    pub fn step_with_noise(&mut self, batch: &TrainBatch, lambda: f64, lr: f64) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.protection, &self.deprotection, batch, lambda)?;
        self.step_count += 1;
        let t = self.step_count;
        adam_update(
            &mut self.protection.weight,
            &grads.wp,
            &mut self.prot_moments.m,
            &mut self.prot_moments.v,
            lr,
            t,
        );
        adam_update_bias(
            &mut self.protection.bias,
            &grads.bp,
            &mut self.prot_moments.mb,
            &mut self.prot_moments.vb,
            lr,
            t,
        );
        adam_update(
            &mut self.deprotection.weight,
            &grads.wq,
            &mut self.deprot_moments.m,
            &mut self.deprot_moments.v,
            lr,
            t,
        );
        adam_update_bias(
            &mut self.deprotection.bias,
            &grads.bq,
            &mut self.deprot_moments.mb,
            &mut self.deprot_moments.vb,
            lr,
            t,
        );
        Ok(loss)
    }

    /// One update with channel noise scaled to the power the protected
    /// vector would be transmitted with, so the deprotection net learns
    /// denoising at the configured SNR. `unit_noise` holds standard normal
    /// draws, one per transmitted coordinate; passing the same draws every
    /// epoch keeps the objective a deterministic finite sum, which stops the
    /// per-batch noise from random-walking the protection weights. The noise
    /// standard deviation tracks the current protected power but is treated
    /// as a constant in the backward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        xp: &Array2<f64>,
        xc: &Array2<f64>,
        targets: &Array2<f64>,
        channel: &ChannelConfig,
        unit_noise: &Array2<f64>,
        lambda: f64,
        lr: f64,
    ) -> Result<f64> {
        let o = self.protection.apply_batch(xp)?;
        let b = xp.nrows();
        let total = o.ncols() + xc.ncols();
        if unit_noise.dim() != (b, total) {
            return Err(Error::DimensionMismatch {
                context: "train step unit noise",
                expected: format!("{b}x{total}"),
                got: format!("{:?}", unit_noise.dim()),
            });
        }
        let mut noise = Array2::zeros((b, total));
        let sigma2 = channel.sigma2();
        if sigma2 > 0.0 {
            for row in 0..b {
                let mean_sq = (o.row(row).dot(&o.row(row)) + xc.row(row).dot(&xc.row(row)))
                    / total as f64;
                let std = (sigma2 * mean_sq / channel.power).sqrt();
                for col in 0..total {
                    noise[[row, col]] = std * unit_noise[[row, col]];
                }
            }
        }
        let batch = TrainBatch {
            xp: xp.clone(),
            xc: xc.clone(),
            targets: targets.clone(),
            noise,
        };
        self.step_with_noise(&batch, lambda, lr)
    }
}

/// Trained pair plus the per-epoch mean loss curve.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub protection: AffineNet,
    pub deprotection: AffineNet,
    pub loss_curve: Vec<f64>,
}

/// Flattens the rows of `z` selected (private) and not selected (common) by
/// `private_idx` into two row vectors.
fn split_flat(z: &Array2<f64>, private_idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut private = Vec::with_capacity(private_idx.len() * z.ncols());
    let mut common = Vec::with_capacity((z.nrows() - private_idx.len()) * z.ncols());
    let mut pi = 0;
    for row in 0..z.nrows() {
        let dst = if pi < private_idx.len() && private_idx[pi] == row {
            pi += 1;
            &mut private
        } else {
            &mut common
        };
        dst.extend(z.row(row).iter().copied());
    }
    (private, common)
}

/// Trains a protection/deprotection pair on a latent dataset.
///
/// The privacy targets are Laplace-perturbed copies of the (optionally
/// clipped) private codes at scale `dp.scale()`; realization policy follows
/// `cfg.noise_mode`. Identical inputs and config produce bitwise identical
/// weights.
pub fn train(
    dataset: &[Array2<f64>],
    private_idx: &[usize],
    dp: &DpParams,
    channel: &ChannelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedPair> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput { context: "training dataset" });
    }
    let (m, k) = dataset[0].dim();
    validate_private_idx(m, private_idx)?;
    let d = private_idx.len() * k;
    let n = dataset.len();

    let mut xp = Array2::zeros((n, d));
    let mut xc = Array2::zeros((n, (m - private_idx.len()) * k));
    for (i, z) in dataset.iter().enumerate() {
        if z.dim() != (m, k) {
            return Err(Error::DimensionMismatch {
                context: "training dataset",
                expected: format!("{m}x{k}"),
                got: format!("{:?}", z.dim()),
            });
        }
        let (p, c) = split_flat(z, private_idx);
        xp.row_mut(i).assign(&Array1::from(p));
        xc.row_mut(i).assign(&Array1::from(c));
    }

    // Imitation targets are the plain private codes plus budget-scaled
    // Laplace noise. Clipping stays inside the genuine mechanism and the
    // sensitivity accounting: an affine map can express it only as a global
    // shrink, and inverting that shrink amplifies the legitimate receiver's
    // channel noise for no privacy gain.
    let draw_targets = |tag_index: u64| -> Result<Array2<f64>> {
        let noise = sample_laplace(
            n * d,
            dp.scale(),
            seed::derive(cfg.seed, seed::stream::DP_NOISE, tag_index),
        )?;
        let noise = Array2::from_shape_vec((n, d), noise).expect("count matches");
        Ok(&xp + &noise)
    };
    let mut targets = draw_targets(0)?;

    let mut trainer = Trainer::new(
        AffineNet::scaled_identity(
            d,
            NetRole::Protection,
            0.01,
            seed::derive(cfg.seed, seed::stream::NET_INIT, 0),
        ),
        AffineNet::scaled_identity(
            d,
            NetRole::Deprotection,
            0.01,
            seed::derive(cfg.seed, seed::stream::NET_INIT, 1),
        ),
    )?;

    let l_total = m * k;
    let draw_unit = |tag_index: u64| -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
            cfg.seed,
            seed::stream::TRAIN_CHANNEL,
            tag_index,
        ));
        Array2::from_shape_fn((n, l_total), |_| StandardNormal.sample(&mut rng))
    };
    let mut unit_noise = draw_unit(0);

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        if cfg.noise_mode == NoiseMode::Fresh && epoch > 0 {
            targets = draw_targets(epoch as u64)?;
            unit_noise = draw_unit(epoch as u64);
        }
        let lr = lr_at(cfg.lr0, cfg.t0, cfg.t_mult, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::stream::SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bxp = gather_rows(&xp, chunk);
            let bxc = gather_rows(&xc, chunk);
            let bt = gather_rows(&targets, chunk);
            let bu = gather_rows(&unit_noise, chunk);
            let loss = trainer.step(&bxp, &bxc, &bt, channel, &bu, cfg.lambda, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    lr,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        loss_curve.push(epoch_loss / n as f64);
    }

    Ok(TrainedPair {
        protection: trainer.protection,
        deprotection: trainer.deprotection,
        loss_curve,
    })
}

fn gather_rows(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&src.row(r));
    }
    out
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WDPC";
const CHECKPOINT_VERSION: u32 = 1;

fn push_net(buf: &mut Vec<u8>, net: &AffineNet) {
    for &v in net.weight.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in net.bias.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes both nets: magic "WDPC", version and D as little-endian u32, then
/// protection weight (row-major f64), protection bias, deprotection weight,
/// deprotection bias. The training config goes to a JSON sidecar at
/// `<path>.json`.
pub fn save_checkpoint(
    path: &std::path::Path,
    protection: &AffineNet,
    deprotection: &AffineNet,
    cfg: &TrainConfig,
) -> Result<()> {
    if protection.dim() != deprotection.dim() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint nets",
            expected: protection.dim().to_string(),
            got: deprotection.dim().to_string(),
        });
    }
    let d = protection.dim();
    let mut buf = Vec::with_capacity(12 + 2 * (d * d + d) * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    push_net(&mut buf, protection);
    push_net(&mut buf, deprotection);
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(path, buf).map_err(io_err)?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&sidecar, json).map_err(|source| Error::Io {
        path: sidecar.display().to_string(),
        source,
    })
}

#[must_use]
pub fn sidecar_path(checkpoint: &std::path::Path) -> std::path::PathBuf {
    let mut os = checkpoint.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &std::path::Path) -> Result<(AffineNet, AffineNet)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |details: String| Error::BadFormat {
        path: path.display().to_string(),
        details,
    };
    if bytes.len() < 12 {
        return Err(bad(format!("file too short: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 2 * (d * d + d) * 8;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for D = {d}, got {}", bytes.len())));
    }
    let mut off = 12;
    let mut read_net = |role: NetRole| {
        let mut weight = Array2::zeros((d, d));
        for v in weight.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
        let mut bias = Array1::zeros(d);
        for v in bias.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
        AffineNet { weight, bias, role }
    };
    let protection = read_net(NetRole::Protection);
    let deprotection = read_net(NetRole::Deprotection);
    Ok((protection, deprotection))
}

/// Reads the JSON sidecar for a checkpoint.
pub fn load_sidecar(checkpoint: &std::path::Path) -> Result<TrainConfig> {
    let path = sidecar_path(checkpoint);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::BadFormat {
        path: path.display().to_string(),
        details: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::sample_latents;
    use rand_distr::Normal;

    fn small_batch(d: usize, c: usize, b: usize, seed: u64) -> TrainBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            })
        };
        TrainBatch {
            xp: draw(b, d),
            xc: draw(b, c),
            targets: draw(b, d),
            noise: draw(b, d + c),
        }
    }

    #[test]
    fn identity_net_is_passthrough() {
        let net = AffineNet::identity(8, NetRole::Protection);
        let z = sample_latents(1, 4, 2, 3).pop().unwrap();
        let out = protect(&net, &z).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let mut net = AffineNet::identity(6, NetRole::Deprotection);
        net.weight.fill(0.0);
        net.bias.fill(2.5);
        let y = Array2::from_elem((3, 2), 7.0);
        let out = deprotect(&net, &y).unwrap();
        assert!(out.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn role_and_dims_enforced() {
        let net = AffineNet::identity(8, NetRole::Protection);
        let z = Array2::<f64>::zeros((4, 2));
        assert!(matches!(deprotect(&net, &z), Err(Error::RoleMismatch { .. })));
        let z_bad = Array2::<f64>::zeros((3, 2));
        assert!(protect(&net, &z_bad).is_err());
    }

    #[test]
    fn affine_matches_naive_loops() {
        let d = 12;
        let net = AffineNet::scaled_identity(d, NetRole::Protection, 0.5, 9);
        let x = small_batch(d, 0, 3, 4).xp;
        let out = net.apply_batch(&x).unwrap();
        for b in 0..3 {
            for i in 0..d {
                let mut expect = net.bias[i];
                for j in 0..d {
                    expect += net.weight[[i, j]] * x[[b, j]];
                }
                assert!((out[[b, i]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_linear_without_bias() {
        let mut net = AffineNet::scaled_identity(8, NetRole::Protection, 0.3, 11);
        net.bias.fill(0.0);
        let z = sample_latents(1, 4, 2, 5).pop().unwrap();
        let a = protect(&net, &z).unwrap();
        let b = protect(&net, &(&z * 2.0)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let z = Array2::from_elem((4, 2), 1.0);
        let zp = Array2::from_elem((2, 2), 1.0);
        assert_eq!(training_loss(&z, &z, &zp, &zp, 1e-3).unwrap(), 0.0);
        // lambda = 0 ignores the privacy mismatch.
        let far = Array2::from_elem((2, 2), 100.0);
        assert_eq!(training_loss(&z, &z, &zp, &far, 0.0).unwrap(), 0.0);
        // Straight-line check of both terms: recon is a per-element mean,
        // the privacy mismatch a raw sum over the four private entries.
        let s1 = Array2::from_elem((4, 2), 2.0);
        let loss = training_loss(&z, &s1, &zp, &far, 0.5).unwrap();
        assert!((loss - (1.0 + 0.5 * 4.0 * 99.0f64.powi(2))).abs() < 1e-9);
        // Shape mismatches are rejected.
        assert!(training_loss(&z, &zp, &zp, &zp, 1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = 6;
        let c = 4;
        let lambda = 1e-3;
        let batch = small_batch(d, c, 5, 21);
        let protection = AffineNet::scaled_identity(d, NetRole::Protection, 0.2, 31);
        let deprotection = AffineNet::scaled_identity(d, NetRole::Deprotection, 0.2, 32);
        let (_, grads) = batch_gradients(&protection, &deprotection, &batch, lambda).unwrap();

        let h = 1e-5;
        let check = |analytic: f64, perturb: &dyn Fn(f64) -> (AffineNet, AffineNet), label: String| {
            let (p_plus, q_plus) = perturb(h);
            let (p_minus, q_minus) = perturb(-h);
            let plus = batch_loss(&p_plus, &q_plus, &batch, lambda).unwrap();
            let minus = batch_loss(&p_minus, &q_minus, &batch, lambda).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "{label}: analytic {analytic}, fd {fd}, rel {rel}");
        };

        for i in 0..d {
            for j in 0..d {
                check(
                    grads.wp[[i, j]],
                    &|eps| {
                        let mut p = protection.clone();
                        p.weight[[i, j]] += eps;
                        (p, deprotection.clone())
                    },
                    format!("wp[{i},{j}]"),
                );
                check(
                    grads.wq[[i, j]],
                    &|eps| {
                        let mut q = deprotection.clone();
                        q.weight[[i, j]] += eps;
                        (protection.clone(), q)
                    },
                    format!("wq[{i},{j}]"),
                );
            }
            check(
                grads.bp[i],
                &|eps| {
                    let mut p = protection.clone();
                    p.bias[i] += eps;
                    (p, deprotection.clone())
                },
                format!("bp[{i}]"),
            );
            check(
                grads.bq[i],
                &|eps| {
                    let mut q = deprotection.clone();
                    q.bias[i] += eps;
                    (protection.clone(), q)
                },
                format!("bq[{i}]"),
            );
        }
    }

    #[test]
    fn zero_lr_step_leaves_params_bitwise_unchanged() {
        let d = 6;
        let batch = small_batch(d, 2, 4, 7);
        let mut trainer = Trainer::new(
            AffineNet::scaled_identity(d, NetRole::Protection, 0.1, 1),
            AffineNet::scaled_identity(d, NetRole::Deprotection, 0.1, 2),
        )
        .unwrap();
        let before_p = trainer.protection.clone();
        let before_q = trainer.deprotection.clone();
        trainer.step_with_noise(&batch, 1e-3, 0.0).unwrap();
        assert_eq!(trainer.protection, before_p);
        assert_eq!(trainer.deprotection, before_q);
    }

    #[test]
    fn lr_schedule_values() {
        let lr0 = 3e-4;
        assert_eq!(lr_at(lr0, 10, 2, 0), lr0);
        assert!((lr_at(lr0, 10, 2, 5) - lr0 / 2.0).abs() < 1e-12);
        // Restart at epoch 10, then a cycle of length 20.
        assert!((lr_at(lr0, 10, 2, 10) - lr0).abs() < 1e-12);
        assert!((lr_at(lr0, 10, 2, 20) - lr0 / 2.0).abs() < 1e-12);
        // Monotone decay within a cycle.
        for e in 0..9 {
            assert!(lr_at(lr0, 10, 2, e + 1) < lr_at(lr0, 10, 2, e));
        }
    }

    #[test]
    fn noiseless_training_drives_reconstruction_down() {
        // lambda = 0 and a noiseless channel: the pair should tighten toward
        // mutual inverses.
        let dataset = sample_latents(256, 4, 2, 13);
        let dp = DpParams::new(1.0, 1.0).unwrap();
        let channel = ChannelConfig { snr_db: f64::INFINITY, power: 1.0, seed: 0 };
        let cfg = TrainConfig {
            lambda: 0.0,
            epochs: 60,
            batch_size: 64,
            seed: 5,
            ..TrainConfig::default()
        };
        let pair = train(&dataset, &[0, 2], &dp, &channel, &cfg).unwrap();
        let last = *pair.loss_curve.last().unwrap();
        assert!(last < 1e-4, "final loss {last}");
        assert!(last < pair.loss_curve[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = sample_latents(64, 4, 2, 17);
        let dp = DpParams::new(5.0, 10.0).unwrap();
        let channel = ChannelConfig::default();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&dataset, &[0, 2], &dp, &channel, &cfg).unwrap();
        let b = train(&dataset, &[0, 2], &dp, &channel, &cfg).unwrap();
        assert_eq!(a.protection, b.protection);
        assert_eq!(a.deprotection, b.deprotection);
        assert_eq!(a.loss_curve, b.loss_curve);
        let other = TrainConfig { seed: 12, ..cfg };
        let c = train(&dataset, &[0, 2], &dp, &channel, &other).unwrap();
        assert_ne!(a.protection, c.protection);
    }

    #[test]
    fn smoothed_loss_descends_at_tight_budget() {
        let dataset = sample_latents(512, 8, 16, 23);
        let bounds = crate::dp::compute_clip_bounds(&dataset, 0.005, 0.995).unwrap();
        let df = crate::dp::sensitivity_closed_form(&bounds, 128);
        let dp = DpParams::new(1.0, df).unwrap();
        let channel = ChannelConfig::default();
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 128,
            seed: 3,
            ..TrainConfig::default()
        };
        let pair = train(&dataset, &[0, 1, 3, 4, 5, 6], &dp, &channel, &cfg).unwrap();
        let curve = &pair.loss_curve;
        let head: f64 = curve[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = curve[curve.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail <= head, "smoothed loss rose: head {head}, tail {tail}");

        // The trained deprotection should beat raw reception on held-out data.
        let held = sample_latents(64, 8, 16, 99);
        let mut raw_err = 0.0;
        let mut deprot_err = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, channel.sigma2().sqrt()).unwrap();
        for z in &held {
            let (p, _) = split_flat(z, &[0, 1, 3, 4, 5, 6]);
            let p = Array2::from_shape_vec((1, p.len()), p).unwrap();
            let o = pair.protection.apply_batch(&p).unwrap();
            let y = o.mapv(|v| v) + Array2::from_shape_fn(o.dim(), |_| normal.sample(&mut rng));
            let s = pair.deprotection.apply_batch(&y).unwrap();
            raw_err += mean_sq(&(&y - &p));
            deprot_err += mean_sq(&(&s - &p));
        }
        assert!(
            deprot_err < raw_err,
            "deprotection did not help: {deprot_err} vs {raw_err}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pair.wdpc");
        let p = AffineNet::scaled_identity(10, NetRole::Protection, 0.2, 100);
        let q = AffineNet::scaled_identity(10, NetRole::Deprotection, 0.2, 101);
        let cfg = TrainConfig::default();
        save_checkpoint(&path, &p, &q, &cfg).unwrap();
        let (p2, q2) = load_checkpoint(&path).unwrap();
        assert_eq!(p.weight, p2.weight);
        assert_eq!(p.bias, p2.bias);
        assert_eq!(q.weight, q2.weight);
        assert_eq!(q.bias, q2.bias);
        assert_eq!(p2.role, NetRole::Protection);
        assert_eq!(q2.role, NetRole::Deprotection);
        let side = load_sidecar(&path).unwrap();
        assert_eq!(side, cfg);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wdpc");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x02\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadFormat { .. })));
        let p = AffineNet::identity(4, NetRole::Protection);
        let q = AffineNet::identity(4, NetRole::Deprotection);
        save_checkpoint(&path, &p, &q, &TrainConfig::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadFormat { .. })));
    }
}
