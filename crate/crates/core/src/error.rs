use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is missing, out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in a forward value or gradient.
    #[error("numeric failure at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },

    /// Training aborted because a loss went non-finite.
    #[error("numeric failure during task {task} at step {step}: {detail}")]
    Training {
        task: usize,
        step: usize,
        detail: String,
        breakdown: Option<Box<crate::objectives::LossBreakdown>>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Config(_) | Error::Json(_) => "config",
            Error::Numeric { .. } | Error::Training { .. } => "numeric",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status: 1 numeric or internal failure, 2 environment
    /// and I/O, 3 configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Training { .. } | Error::Contract(_) => 1,
            Error::Io(_) => 2,
            Error::Config(_) | Error::Json(_) => 3,
        }
    }
}
