use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {index} out of range (environment has {count} actions)")]
    ActionOutOfRange { index: usize, count: usize },

    #[error("state is terminal: {0}")]
    Terminal(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("feature vector has length {got}, expected {expected}")]
    FeatureLength { got: usize, expected: usize },

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("search exceeded its wall-clock budget of {0} ms")]
    Timeout(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
