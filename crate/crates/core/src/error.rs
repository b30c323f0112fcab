use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bit budget of {budget} exhausted (attempted read #{attempted})")]
    BudgetExhausted { budget: usize, attempted: usize },

    #[error("enumeration of {requested} bits exceeds cap of {cap}")]
    EnumerationTooLarge { requested: usize, cap: usize },

    #[error("universe of {requested} items exceeds cap of {cap}")]
    UniverseTooLarge { requested: u128, cap: u128 },

    #[error("no law registered for distribution {fingerprint:#018x}")]
    UnknownDistribution { fingerprint: u64 },

    #[error("sample carries no source distribution")]
    MissingSource,

    #[error("compression needs at least {min_bits} bits for support {support}, got {bits}")]
    TooFewBits {
        bits: usize,
        min_bits: usize,
        support: usize,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample has {got} points, algorithm expects {expected}")]
    SampleSize { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("precondition failed: {what} (measured {measured:.6}, required {required:.6})")]
    Precondition { what: String, measured: f64, required: f64 },

    #[error("search failed: {what} (best observed {best:.6})")]
    SearchFailed { what: String, best: f64 },

    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
