//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },

    #[error("invalid value for {what}: {details}")]
    InvalidValue { what: String, details: String },

    #[error("invalid private index set: {details}")]
    InvalidPrivateIdx { details: String },

    #[error("inversion diverged at iteration {iteration} (loss not finite)")]
    Divergence { iteration: usize },

    #[error("training loss not finite at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("non-finite metric in {context}")]
    NonFiniteMetric { context: &'static str },

    #[error("net role mismatch: expected {expected:?}, got {got:?}")]
    RoleMismatch {
        expected: crate::nets::NetRole,
        got: crate::nets::NetRole,
    },

    #[error("missing checkpoints for epsilon values: {}", format_eps(.epsilons))]
    MissingCheckpoints { epsilons: Vec<f64> },

    #[error("bad file format in {path}: {details}")]
    BadFormat { path: String, details: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_eps(eps: &[f64]) -> String {
    let parts: Vec<String> = eps.iter().map(|e| format!("{e}")).collect();
    parts.join(", ")
}

impl Error {
    /// True for failures of numerical origin (divergence, non-finite values).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteMetric { .. }
        )
    }
}
