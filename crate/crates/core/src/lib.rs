//! Desk-scale simulator for differentially private semantic transmission over a
//! wiretap channel.
//!
//! A seeded block-structured linear generator stands in for a semantic image
//! synthesizer: images are produced from per-code latent matrices and recovered
//! by gradient-descent inversion. Private latent codes pass through a trainable
//! affine protection net before transmission; the legitimate receiver holds the
//! matching deprotection net, while the eavesdropper reconstructs from the raw
//! channel output. Laplace-mechanism utilities calibrate the protection target
//! to an epsilon budget and estimate the effective budget actually delivered.

pub mod channel;
pub mod dp;
pub mod error;
pub mod latent;
pub mod nets;
pub mod pipeline;
pub mod seed;

pub use channel::ChannelConfig;
pub use dp::{ClipBounds, DpParams, LaplaceFit};
pub use error::{Error, Result};
pub use latent::{GeneratorModel, Image, InversionConfig, LatentCodes};
pub use nets::{AffineNet, NetRole, TrainConfig, TrainedPair};
pub use pipeline::{SweepConfig, SweepReport, SweepRow, TransmissionResult};
