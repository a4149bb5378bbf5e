use thiserror::Error;

/// Errors raised by the model, region-graph, and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid lattice or region specification: {0}")]
    Spec(String),

    #[error("region graph structure error: {0}")]
    Structure(String),

    #[error("engine configuration error: {0}")]
    Config(String),

    #[error("numeric error{}: {message}", edge.map(|e| format!(" on edge {e}")).unwrap_or_default())]
    Numeric { edge: Option<usize>, message: String },

    #[error("enumeration of {configs} configurations exceeds cap of {cap}")]
    Size { configs: u128, cap: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bisection bracket ({lo}, {hi}) does not straddle rho = 1 (rho = {rho_lo}, {rho_hi}); widen the scan")]
    Bracket { lo: f64, hi: f64, rho_lo: f64, rho_hi: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numeric(edge: Option<usize>, message: impl Into<String>) -> Self {
        Error::Numeric {
            edge,
            message: message.into(),
        }
    }
}
