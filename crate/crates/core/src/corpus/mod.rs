//! Corpus ingestion, filtering, splitting and candidate-pool construction.

mod ingest;
mod pool;
mod split;

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub use ingest::{ingest, ingest_with, IngestOptions, IngestReport, MalformedLine};
pub use pool::{build_pool, pool_query, DEFAULT_POOL_LIMIT};
pub use split::{split, Split, SplitAssignment};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: schema violation: {message}")]
    SchemaViolation {
        file: String,
        line: usize,
        message: String,
    },
    #[error("corpus contains no instances")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("retriever unavailable: {0}")]
    RetrieverUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Cmv,
    OtherSubreddit,
}

/// One historical post or comment written by a persuadee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub record_id: String,
    pub author_id: String,
    pub text: String,
    pub created_at: i64,
    pub source: Source,
}

/// A reply to the original post, labelled 1 when it earned a delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentLabel {
    pub comment_id: String,
    pub text: String,
    pub label: u8,
}

impl CommentLabel {
    pub fn is_delta(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersuasionInstance {
    pub instance_id: String,
    pub user_id: String,
    pub post_text: String,
    pub post_created_at: i64,
    pub comments: Vec<CommentLabel>,
    /// Records written before the post, ascending by `created_at`.
    pub full_history: Vec<UserRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<String>>,
}

impl PersuasionInstance {
    pub fn n_delta(&self) -> usize {
        self.comments.iter().filter(|c| c.is_delta()).count()
    }

    pub fn n_non_delta(&self) -> usize {
        self.comments.len() - self.n_delta()
    }

    pub fn record(&self, record_id: &str) -> Option<&UserRecord> {
        self.full_history.iter().find(|r| r.record_id == record_id)
    }

    /// Records of the candidate pool in pool order, or the full history when
    /// no pool has been built.
    pub fn pool_records(&self) -> Vec<&UserRecord> {
        match &self.pool {
            Some(ids) => ids.iter().filter_map(|id| self.record(id)).collect(),
            None => self.full_history.iter().collect(),
        }
    }

    pub fn pool_ids(&self) -> Vec<String> {
        self.pool_records().iter().map(|r| r.record_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub instances: Vec<PersuasionInstance>,
}

impl Corpus {
    pub fn new(instances: Vec<PersuasionInstance>) -> Self {
        Self { instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, instance_id: &str) -> Option<&PersuasionInstance> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }
}

/// Keeps instances with at least one delta comment, at least one non-delta
/// comment, and at least `min_history` prior records.
pub fn filter_instances(corpus: Corpus, min_history: usize) -> Corpus {
    let instances = corpus
        .instances
        .into_iter()
        .filter(|inst| {
            inst.n_delta() >= 1 && inst.n_non_delta() >= 1 && inst.full_history.len() >= min_history
        })
        .collect();
    Corpus { instances }
}

pub const DEFAULT_MIN_HISTORY: usize = 15;
