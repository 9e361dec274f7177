use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot draw {requested} records without replacement from {available}")]
    SampleExhausted { requested: usize, available: usize },

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("encoder {encoder} cannot encode observation of shape {shape:?}: {reason}")]
    EncodeShape {
        encoder: String,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("no pre-encoded code for observation digest {0}")]
    MissingCode(String),

    #[error("observation digest {0} is assigned more than one code")]
    DuplicateDigest(String),

    #[error("invalid encoder spec: {0}")]
    EncoderSpec(String),

    #[error("action distribution has no samples")]
    EmptySupport,

    #[error("action spaces differ: {0} vs {1}")]
    SpaceMismatch(String, String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("datasets were encoded with different encoder sets")]
    EncoderMismatch,

    #[error("no comparable states between the datasets under any encoder")]
    NoComparableStates,

    #[error("invalid measure configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("grid shape error: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
