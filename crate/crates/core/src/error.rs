use std::path::PathBuf;

use thiserror::Error;

use crate::model::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate embedding: zero vector has no direction{}", locator_suffix(.0))]
    ZeroVector(String),

    #[error("non-finite component in embedding{}", locator_suffix(.0))]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}{}", locator_suffix(.locator))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        locator: String,
    },

    #[error("{locator}: child `{child_id}` references unknown parent `{parent_id}`")]
    DanglingParent {
        parent_id: String,
        child_id: String,
        locator: String,
    },

    #[error("{locator}: duplicate child id `{child_id}`")]
    DuplicateChild { child_id: String, locator: String },

    #[error("{locator}: duplicate parent id `{parent_id}`")]
    DuplicateParent { parent_id: String, locator: String },

    #[error("{locator}: parent `{parent_id}` has no children")]
    EmptyParent { parent_id: String, locator: String },

    #[error("query `{0}` has no tokens")]
    EmptyQuery(String),

    #[error("negative relevance grade {grade} for ({query_id}, {parent_id}) on line {line}")]
    NegativeGrade {
        query_id: String,
        parent_id: String,
        grade: i64,
        line: usize,
    },

    #[error("parse error at {locator}: {message}")]
    Parse { locator: String, message: String },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query vector is not unit-norm (norm {norm})")]
    UnnormalizedQuery { norm: f64 },

    #[error("k must be at least 1")]
    InvalidK,

    #[error("unknown parent `{0}`")]
    UnknownParent(String),

    #[error("cannot score against an empty child matrix")]
    EmptyChildren,

    #[error("cannot normalize an empty score set")]
    EmptyScores,

    #[error("no fusion weight configured for active modality `{0}`")]
    MissingWeight(Modality),

    #[error("recall cutoff r must be at least 1")]
    InvalidRecallCutoff,

    #[error("invalid index file: {0}")]
    IndexFormat(String),

    #[error("oracle refused: corpus has {parents} parents, ceiling is {ceiling}")]
    OracleRefused { parents: usize, ceiling: usize },
}

fn locator_suffix(locator: &str) -> String {
    if locator.is_empty() {
        String::new()
    } else {
        format!(" ({locator})")
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(locator: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            locator: locator.into(),
            message: message.to_string(),
        }
    }
}
