use thiserror::Error;

/// Errors raised by the selection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no screenable columns: every column is constant")]
    NoScreenableColumns,

    #[error("sampler produced a non-finite state at iteration {iteration}: {what}")]
    SamplerDiverged { iteration: usize, what: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("coordinate descent did not converge at lambda index {lambda_index}")]
    LassoNonConvergence { lambda_index: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Fisher transform is infinite for column {0} (|r| = 1)")]
    InfiniteTransform(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
