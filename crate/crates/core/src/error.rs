use std::path::PathBuf;

use crate::adapters::AdapterError;
use crate::kb::EntityId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("knowledge base input is empty")]
    EmptyInput,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("unknown entity name {0:?}")]
    UnknownEntityName(String),
    #[error("invalid knowledge source: {0}")]
    InvalidKnowledgeSource(String),

    #[error("cannot fit a vectorizer on an empty corpus")]
    EmptyCorpus,

    #[error("no template for relation {0:?}")]
    MissingTemplate(String),
    #[error("no entity has at least two usable triplets")]
    NoEligibleEntity,
    #[error("no pair of entities shares a relation")]
    NoEligiblePair,
    #[error("not enough distractor triplets: {0}")]
    InsufficientDistractors(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("knowledge base has no entities")]
    EmptyKnowledgeBase,

    #[error("retrieval pool is empty")]
    EmptyPool,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),

    #[error("gold answer is empty")]
    EmptyGold,
    #[error("{predicted} predicted entities for {gold} gold entities")]
    ArityMismatch { predicted: usize, gold: usize },
    #[error("index {index} out of bounds for pool of {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error(transparent)]
    Adapter(#[from] AdapterError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
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
