//! Byte-level tokenizer, the two transformer rankers, and checkpoint IO.
//!
//! Both models consume the same template: `<s> query : title : summary </s>`.
//! The decoder (teacher) reads it causally and scores from the final
//! position; the encoder (student) reads it bidirectionally and scores from
//! the first. Scores are unbounded reals; only their order matters.

mod checkpoint;
mod model;
pub mod tokenizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use model::{
    student_score, teacher_score, Leased, ModelConfig, ModelKind, ModelParams,
};

use crate::numerics::NumericsError;

/// One query/document pair, the unit every stage consumes.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QueryDoc {
    pub query: String,
    pub title: String,
    pub summary: String,
}

/// Errors from encoding or running a model.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("query of {query_len} bytes cannot fit in {max_len} tokens with template overhead")]
    QueryTooLong { query_len: usize, max_len: usize },
    #[error("query must be non-empty")]
    EmptyQuery,
    #[error("sequence of {len} tokens exceeds the model maximum {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("decoder pooling requires the sequence to end with the end token")]
    MissingEnd,
    #[error("encoder pooling requires the sequence to start with the start token")]
    MissingStart,
    #[error("expected a {expected:?} model, got a {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
