use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("malformed IDX file at byte {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("clustering loss undefined for single-cluster batch")]
    SingleCluster,

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("classifier accuracy {achieved:.4} is below the gate {required:.4}")]
    Gate { achieved: f64, required: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    Convergence { what: &'static str, residual: f64 },

    #[error("malformed checkpoint at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Idx { .. } => "idx",
            Error::SingleCluster => "single_cluster",
            Error::GradCheck(_) => "grad_check",
            Error::Gate { .. } => "gate",
            Error::Convergence { .. } => "convergence",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
