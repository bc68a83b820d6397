use thiserror::Error;

/// Errors raised across the library.
///
/// `Numerical` failures (non-convergence, divergence, symbol violations) are
/// distinguished from `Invalid*` input errors so the CLI can map them to
/// different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in input field at index {0}")]
    NonFinite(usize),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("linear symbol not positive: symbol({k:.6}) = {value:.6e} (|k| at offending mode)")]
    SymbolNotPositive { k: f64, value: f64 },

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("file format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that come from a valid request whose numerics failed.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SymbolNotPositive { .. }
                | Error::Diverged(_)
                | Error::NotConverged { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
