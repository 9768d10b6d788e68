use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vectors, trajectories or operators live on incompatible spaces or grids.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A state became non-finite, exceeded the blow-up guard, or an inner
    /// fixed point failed to converge.
    #[error("numeric failure at t = {time}: {message}")]
    Numeric { time: f64, message: String },
    /// A Monte Carlo path failed; carries the lattice identity so the run can be reproduced.
    #[error("path failure (seed {seed}, stream {stream}, m = {m}): {source}")]
    Path {
        seed: u64,
        stream: u64,
        m: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for errors caused by numerics (blow-up, non-convergence) rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric { .. } => true,
            Error::Path { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
