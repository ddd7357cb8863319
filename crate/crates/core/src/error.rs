use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("law cannot be reduced to the boundary case: {0}")]
    NonBoundaryReducible(String),

    #[error("degenerate law: {0}")]
    Degenerate(String),

    #[error("law is not supercritical: mean offspring {mean_offspring}")]
    NotSupercritical { mean_offspring: f64 },

    #[error("non-finite sample contribution: {0}")]
    Numeric(String),

    #[error("law is not boundary-certified: {0}")]
    Uncertified(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument {value} outside the valid range for {context}")]
    Range { value: f64, context: String },

    #[error("renewal resolution too coarse: tail mass {tail_mass:.3e} above threshold with k_max = {k_max}; increase k_max")]
    Resolution { tail_mass: f64, k_max: usize },

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn range(value: f64, context: impl Into<String>) -> Self {
        Error::Range {
            value,
            context: context.into(),
        }
    }
}
