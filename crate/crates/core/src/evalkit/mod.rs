//! Evaluation metrics and report assembly.

mod metrics;
mod report;

pub use metrics::{
    average_ranks, f1, ncg_at_k, ndcg_at_k, pearson, roc_auc, spearman_rho, top_k, topk_overlap, Confusion, F1Mode, Gain,
};
pub use report::{AgreementRow, EndToEndRow, MetricReport, RetrievalRow};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("both classes must be present")]
    SingleClass,
    #[error("no relevance for record {0}")]
    MissingRelevance(String),
    #[error("relevance must be non-negative, got {0}")]
    NegativeRelevance(f64),
    #[error("zero variance")]
    ZeroVariance,
    #[error("score maps cover different keys")]
    KeySetMismatch,
    #[error("need more points, got {0}")]
    TooFewPoints(usize),
    #[error("k must be at least 1")]
    BadK,
    #[error("NaN score")]
    NotANumber,
}
