use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("accuracy error: estimate {achieved:.3e} exceeds requested {requested:.3e} ({context})")]
    Accuracy {
        achieved: f64,
        requested: f64,
        context: String,
    },

    #[error("empty grid: {0}")]
    EmptyGrid(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure at {node}: {detail}")]
    Numeric { node: String, detail: String },

    #[error("non-contraction: C_emp = {c_emp:.4} >= 1 at horizon {horizon}; use a smaller horizon")]
    NonContraction { c_emp: f64, horizon: f64 },

    #[error("convergence quality: {0}")]
    ConvergenceQuality(String),

    #[error("quality error: {0}")]
    Quality(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
