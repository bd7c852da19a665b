use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient precision: {0}")]
    InsufficientPrecision(String),

    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no witness sequence: {0}")]
    NoWitness(String),

    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("argument outside domain: {0}")]
    OutOfDomain(String),

    #[error(
        "badness violation at level {level}: node {node} lost {pruned} of {children} children \
         (at most {allowed} allowed)"
    )]
    BadnessViolation {
        level: usize,
        node: usize,
        pruned: usize,
        children: usize,
        allowed: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
