use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid class frequency {0}")]
    InvalidFrequency(f64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("object {object_id}: only {got} distinct captions available")]
    InsufficientDiversity { object_id: String, got: usize },

    #[error("captioner unavailable: {0}")]
    CaptionerUnavailable(String),

    #[error("style {0} is not implemented by this captioner")]
    NotImplementedStyle(String),

    #[error("invalid prompt template {0:?}: expected exactly one \"{{}}\" placeholder")]
    InvalidTemplate(String),

    #[error("need {needed} pseudo captions, got {got}")]
    InsufficientLabels { needed: usize, got: usize },

    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("text encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("no known concept in {0:?}")]
    UnknownConcepts(String),

    #[error("requested {requested} classes but only {available} are eligible")]
    InsufficientClasses { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot match {gts} ground truths to {queries} queries")]
    InfeasibleMatch { queries: usize, gts: usize },

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("no proposals to rank")]
    EmptyProposals,

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("world has no scenes")]
    EmptyWorld,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
