//! Candidate record pools.

use super::{CorpusError, PersuasionInstance};
use crate::gateway::Gateway;
use crate::retrieval::{Fusion, Retriever, RetrievalError};

pub const DEFAULT_POOL_LIMIT: usize = 100;

/// Delta comments joined by newlines in `comment_id` order.
pub fn pool_query(instance: &PersuasionInstance) -> String {
    let mut deltas: Vec<_> = instance.comments.iter().filter(|c| c.is_delta()).collect();
    deltas.sort_by(|a, b| a.comment_id.cmp(&b.comment_id));
    deltas.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n")
}

/// Ranks the full history by hybrid relevance to the delta comments and
/// keeps the first `limit` record ids, in rank order.
pub fn build_pool(
    instance: &PersuasionInstance,
    retriever: &Retriever,
    embedder: &Gateway,
    fusion: Fusion,
    limit: usize,
) -> Result<Vec<String>, CorpusError> {
    if instance.n_delta() == 0 {
        return Err(CorpusError::RetrieverUnavailable(format!("{} has no delta comment", instance.instance_id)));
    }
    let query = pool_query(instance);
    let ranking = retriever.rank_hybrid(&query, embedder, fusion).map_err(|e| match e {
        RetrievalError::Gateway(g) => CorpusError::RetrieverUnavailable(g.to_string()),
        other => CorpusError::RetrieverUnavailable(other.to_string()),
    })?;
    Ok(ranking.truncate(limit).entries.into_iter().map(|e| e.record_id).collect())
}
