use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tabulated curve does not cover the requested wavelength interval.
    #[error("wavelength range error: {0}")]
    Range(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A linear operator that must be inverted is (numerically) singular.
    #[error("singular operator: {0}")]
    Singular(String),
    #[error("ill-conditioned shape prior: normal matrix condition estimate {condition:.3e}")]
    IllConditioned { condition: f64 },
    #[error("pyramid structure error: {0}")]
    Structure(String),
    #[error("wavelength grid mismatch: {0}")]
    GridMismatch(String),
    #[error("stream error: {0}")]
    Stream(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("insufficient spectral resolution: {0}")]
    Resolution(String),
    #[error("table parse error: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical operator rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::IllConditioned { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Table(e.to_string())
    }
}
