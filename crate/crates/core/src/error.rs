use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e} (scale {scale:e})")]
    NotPsd { min_eig: f64, scale: f64 },

    #[error("singular system: {0}; raise the jitter scale")]
    Singular(String),

    #[error("requested {requested} components but numerical rank is {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("bandwidth selection failed: {0}")]
    Selection(String),

    #[error("load error at row {row}, column {column}: {message}")]
    Load {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
