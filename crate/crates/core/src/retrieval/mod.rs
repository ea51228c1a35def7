//! Lexical and dense retrieval over a user's records, score fusion, and the
//! query strategies compared in the evaluation harness.

mod dense;
mod fusion;
mod lexical;
mod strategy;

pub use dense::VectorStore;
pub use fusion::{hybrid_rank, min_max, order_scores, Fusion, RankedRecord, Ranking};
pub use lexical::{LexicalIndex, DEFAULT_B, DEFAULT_K1};
pub use strategy::{generate_hyde, QueryStrategy, Retriever};

use crate::gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("nothing to index or score")]
    EmptyInput,
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for {0}")]
    ZeroVector(String),
    #[error("score maps cover different record ids")]
    KeySetMismatch,
    #[error("fusion weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("k must be at least 1")]
    BadK,
    #[error("generated strategy requires a query text")]
    MissingQueryText,
    #[error("unknown query strategy {0:?}")]
    UnknownStrategy(String),
    #[error("malformed vector store: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
