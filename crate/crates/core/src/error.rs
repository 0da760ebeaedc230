use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("newton solve did not converge at t = {time} s (residual {residual:.3e})")]
    NewtonDiverged { time: f64, residual: f64 },

    #[error("boundary value solve failed: {0}")]
    BvpFailed(String),

    #[error("no sign change in root bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(msg)
}
