use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario {id} violates `{rule}`: {detail}")]
    InvalidScenario {
        id: String,
        rule: &'static str,
        detail: String,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("probabilities do not sum to one: {0} + {1}")]
    NotNormalized(f64, f64),

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank deficient design: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("clustered variance needs at least two clusters, got {0}")]
    SingleCluster(usize),

    #[error("degenerate pairs: differences have zero variance")]
    DegeneratePairs,

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("dimension order mismatch")]
    DimensionOrder,

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("tokens-not-in-topk: choice tokens absent from candidates {candidates:?}")]
    TokensNotInTopK { candidates: Vec<String> },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{failed} of {total} scenarios failed, above threshold {threshold}")]
    ThresholdExceeded {
        failed: usize,
        total: usize,
        threshold: f64,
        ledger: Vec<crate::backend::LedgerEntry>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable name used in error ledgers.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidScenario { .. } => "invalid-scenario",
            Error::NonFinite(_) => "non-finite",
            Error::NotNormalized(..) => "not-normalized",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::Empty(_) => "empty",
            Error::Shape(_) => "shape",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::SingleCluster(_) => "single-cluster",
            Error::DegeneratePairs => "degenerate-pairs",
            Error::ZeroVariance(_) => "zero-variance",
            Error::DimensionOrder => "dimension-order",
            Error::Transport { .. } => "transport",
            Error::TokensNotInTopK { .. } => "tokens-not-in-topk",
            Error::Protocol(_) => "protocol",
            Error::ThresholdExceeded { .. } => "threshold-exceeded",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
