use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("format error at {location}: {reason}")]
    Format { location: String, reason: String },

    #[error("agent index {index} out of range for {k} agents")]
    AgentIndex { index: usize, k: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite cost evaluation at probe point {point:?}")]
    NonFiniteCost { point: Vec<f64> },

    #[error("coupled gain system is singular at t={t} (condition number {condition:e})")]
    SingularGainSystem { t: usize, condition: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("training failed at iteration {iteration} (agent block {agent}): {source}")]
    Training {
        iteration: usize,
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            reason: reason.into(),
        }
    }
}
