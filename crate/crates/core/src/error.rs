use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape4, right: Shape4 },

    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: [usize; 4], reason: String },

    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        len: usize,
        shape: Shape4,
        expected: usize,
    },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("quantile level {0} outside [0, 1]")]
    QuantileLevel(f64),

    #[error("image is {h}x{w}; a 3x3 stencil needs at least 3x3")]
    TooSmall { h: usize, w: usize },

    #[error("mask value {value} at flat index {index} outside [0, 1]")]
    MaskRange { index: usize, value: f64 },

    #[error("invalid `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("high-frequency ratio {0} outside [0, 1]")]
    RatioRange(f64),

    #[error("step index {index} out of range for {total} steps")]
    StepIndex { index: usize, total: usize },

    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),

    #[error("invalid sigma schedule: {0}")]
    Schedule(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tensor sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Step index of a sampler failure, if the error carries one.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }
}
