use thiserror::Error;

/// Errors raised by the library.
///
/// `Singular` and `Numerical` are the "numerical failure" class; the CLI maps
/// them to a distinct exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular moment matrix: {0}")]
    Singular(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
