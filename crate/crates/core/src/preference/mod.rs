//! Preference pairs for the profiler and the query generator.

mod export;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evalkit::{ndcg_at_k, Gain, MetricError};
use crate::gateway::{Gateway, RenderedPrompt};
use crate::generation::{Profile, QueryCandidate};
use crate::retrieval::{Fusion, RetrievalError, Retriever};
use crate::utility::ProfileScore;

pub use export::{export_dpo, read_dpo, write_manifest, DpoLine, DpoMetadata, KindManifest, Manifest, TrainingHyperparams};

/// Score differences within this tolerance count as equal.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum PreferenceError {
    #[error("no utility for pooled record {0}")]
    MissingUtility(String),
    #[error("invalid preference config: {0}")]
    BadConfig(String),
    #[error("pairs of mixed kinds cannot share one export")]
    MixedKinds,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Profiler,
    Querygen,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::Profiler => "profiler",
            PairKind::Querygen => "querygen",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContext {
    pub post: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub kind: PairKind,
    pub instance_id: String,
    pub context: PairContext,
    pub prompt: RenderedPrompt,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub margin: f64,
}

/// Thresholds for query-generator pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryPrefConfig {
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub min_margin: f64,
    pub max_pairs_per_post: usize,
}

impl Default for QueryPrefConfig {
    fn default() -> Self {
        Self { pos_threshold: 0.65, neg_threshold: 0.55, min_margin: 0.10, max_pairs_per_post: 8 }
    }
}

impl QueryPrefConfig {
    pub fn validate(&self) -> Result<(), PreferenceError> {
        if self.pos_threshold <= self.neg_threshold {
            return Err(PreferenceError::BadConfig("pos_threshold must exceed neg_threshold".into()));
        }
        if self.max_pairs_per_post == 0 {
            return Err(PreferenceError::BadConfig("max_pairs_per_post must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index pairs (chosen, rejected) from the top-`k` and bottom-`k` of
/// `scores` whose difference reaches `delta`. Items are ranked by score
/// descending, ties by id; `k` is clamped to half the list.
pub fn select_profiler_pairs(items: &[(&str, f64)], k: usize, delta: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].1.total_cmp(&items[a].1).then_with(|| items[a].0.cmp(items[b].0)));
    let k = k.min(items.len() / 2);
    let top = &order[..k];
    let bottom = &order[order.len() - k..];
    let mut out = Vec::new();
    for &w in top {
        for &l in bottom {
            let diff = items[w].1 - items[l].1;
            if diff > 0.0 && diff + SCORE_EPS >= delta {
                out.push((w, l));
            }
        }
    }
    out
}

const MARGIN_GRID: f64 = 1e-9;

/// Index pairs (chosen, rejected) with chosen ≥ pos, rejected ≤ neg and
/// margin ≥ min_margin, largest margins first (ties by "chosen|rejected" id),
/// at most `max_pairs_per_post`.
pub fn select_query_pairs(items: &[(&str, f64)], cfg: &QueryPrefConfig) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize, f64, String)> = Vec::new();
    for (w, (wid, ws)) in items.iter().enumerate() {
        if *ws + SCORE_EPS < cfg.pos_threshold {
            continue;
        }
        for (l, (lid, ls)) in items.iter().enumerate() {
            if *ls > cfg.neg_threshold + SCORE_EPS {
                continue;
            }
            let margin = ws - ls;
            if margin > 0.0 && margin + SCORE_EPS >= cfg.min_margin {
                out.push((w, l, margin, format!("{wid}|{lid}")));
            }
        }
    }
    // Margins that differ only by rounding noise count as equal.
    let key = |m: f64| (m / MARGIN_GRID).round() as i64;
    out.sort_by(|a, b| key(b.2).cmp(&key(a.2)).then_with(|| a.3.cmp(&b.3)));
    out.truncate(cfg.max_pairs_per_post);
    out.into_iter().map(|(w, l, _, _)| (w, l)).collect()
}

/// Profiler pairs from scored candidates that share one prompt.
pub fn build_profiler_pairs(
    scored: &[(Profile, ProfileScore)],
    k: usize,
    delta: f64,
    prompt: &RenderedPrompt,
    post: &str,
) -> Vec<PreferencePair> {
    let items: Vec<(&str, f64)> = scored.iter().map(|(p, s)| (p.profile_id.as_str(), s.f1)).collect();
    select_profiler_pairs(&items, k, delta)
        .into_iter()
        .map(|(w, l)| {
            let (pw, sw) = &scored[w];
            let (pl, sl) = &scored[l];
            PreferencePair {
                pair_id: format!("{}|{}", pw.profile_id, pl.profile_id),
                kind: PairKind::Profiler,
                instance_id: pw.instance_id.clone(),
                context: PairContext { post: post.to_string(), record_ids: Some(pw.record_ids.clone()), question: None },
                prompt: prompt.clone(),
                chosen: pw.text.clone(),
                rejected: pl.text.clone(),
                chosen_score: sw.f1,
                rejected_score: sl.f1,
                margin: sw.f1 - sl.f1,
            }
        })
        .collect()
}

pub fn build_query_pairs(
    scored: &[(QueryCandidate, f64)],
    cfg: &QueryPrefConfig,
    prompt: &RenderedPrompt,
    post: &str,
) -> Vec<PreferencePair> {
    let items: Vec<(&str, f64)> = scored.iter().map(|(c, s)| (c.candidate_id.as_str(), *s)).collect();
    select_query_pairs(&items, cfg)
        .into_iter()
        .map(|(w, l)| {
            let (cw, sw) = &scored[w];
            let (cl, sl) = &scored[l];
            PreferencePair {
                pair_id: format!("{}|{}", cw.candidate_id, cl.candidate_id),
                kind: PairKind::Querygen,
                instance_id: cw.instance_id.clone(),
                context: PairContext { post: post.to_string(), record_ids: None, question: Some(cw.stage1_question.clone()) },
                prompt: prompt.clone(),
                chosen: cw.text.clone(),
                rejected: cl.text.clone(),
                chosen_score: *sw,
                rejected_score: *sl,
                margin: sw - sl,
            }
        })
        .collect()
}

/// How query candidates retrieve when being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryScoring {
    #[default]
    Dense,
    Hybrid,
}

/// NDCG@k of the candidate's ranking over the pool, with record utility as
/// graded relevance.
pub fn score_query_candidate(
    text: &str,
    retriever: &Retriever,
    embedder: &Gateway,
    utility: &BTreeMap<String, f64>,
    k: usize,
    scoring: QueryScoring,
    fusion: Fusion,
) -> Result<f64, PreferenceError> {
    let ranking = match scoring {
        QueryScoring::Dense => retriever.rank_dense(text, embedder)?,
        QueryScoring::Hybrid => retriever.rank_hybrid(text, embedder, fusion)?,
    };
    if let Some(missing) = ranking.entries.iter().find(|e| !utility.contains_key(&e.record_id)) {
        return Err(PreferenceError::MissingUtility(missing.record_id.clone()));
    }
    let pool_utility: BTreeMap<String, f64> =
        ranking.entries.iter().map(|e| (e.record_id.clone(), utility[&e.record_id])).collect();
    let ids = ranking.ids();
    Ok(ndcg_at_k(&ids[..ids.len().min(k)], &pool_utility, k, Gain::Linear)?)
}
