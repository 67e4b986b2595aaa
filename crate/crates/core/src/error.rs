use thiserror::Error;

/// Errors raised by the trial engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid level {level:?} for context variable {variable:?}")]
    InvalidLevel { variable: String, level: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("context cannot be encoded by this model: variable {variable:?} level {level:?} was not observed when the model was built")]
    Unencodable { variable: String, level: String },

    #[error("record is missing true success probabilities (decision {0})")]
    MissingTruth(u64),

    #[error("posterior has no draws")]
    NoDraws,

    #[error("nearest-level target {target:?} for {variable:?} is unobserved; use average imputation instead")]
    NearestUnobserved { variable: String, target: String },

    #[error("learner broke at participant {participant} day {day}: {detail}")]
    LearnerBroken { participant: u32, day: u32, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
