use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence must contain at least one token")]
    EmptySequence,

    #[error("base log-probability is unavailable for `{0}`; the backend cannot score sequences exactly")]
    MissingLogprob(String),

    #[error("base probabilities sum to {0}, expected 1")]
    Unnormalized(f64),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("backend returned an empty continuation for prompt `{0}`")]
    EmptyContinuation(String),

    #[error("budget exhausted after {0} requests")]
    BudgetExhausted(usize),

    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),

    #[error("no recorded fixture response for request {0}")]
    FixtureMiss(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("n_d = {n_d:.4} is too small; need n >= {min_n}")]
    SampleCountTooSmall { n_d: f64, min_n: u64 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("chain checkpoint conflict: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
