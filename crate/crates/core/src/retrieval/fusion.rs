//! Score fusion and the ordering rules shared by every ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{QueryStrategy, RetrievalError};

/// How lexical and dense scores are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fusion {
    /// Min-max normalize each map to [0, 1] (constant maps become 0.5) and
    /// take `weight * lexical + (1 - weight) * dense`.
    MinMax { weight: f64 },
    /// Weighted reciprocal-rank fusion with rank offset `k`.
    Rrf { weight: f64, k: f64 },
}

impl Default for Fusion {
    fn default() -> Self {
        Fusion::MinMax { weight: 0.5 }
    }
}

impl Fusion {
    fn weight(&self) -> f64 {
        match *self {
            Fusion::MinMax { weight } | Fusion::Rrf { weight, .. } => weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub record_id: String,
    pub score: f64,
}

/// Records in descending score order with distinct ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankedRecord>,
    pub query_text: String,
    pub strategy: Option<QueryStrategy>,
}

impl Ranking {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.record_id.as_str()).collect()
    }

    pub fn truncate(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sorts scores descending; exact ties go to the more recent record, then to
/// the lexicographically smaller id. Ids missing from `created_at` count as
/// timestamp 0.
pub fn order_scores(scores: &BTreeMap<String, f64>, created_at: &BTreeMap<String, i64>) -> Vec<RankedRecord> {
    let mut entries: Vec<RankedRecord> =
        scores.iter().map(|(id, s)| RankedRecord { record_id: id.clone(), score: *s }).collect();
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                let ta = created_at.get(&a.record_id).copied().unwrap_or(0);
                let tb = created_at.get(&b.record_id).copied().unwrap_or(0);
                tb.cmp(&ta)
            })
            .then_with(|| a.record_id.cmp(&b.record_id))
    });
    entries
}

pub fn min_max(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    scores
        .iter()
        .map(|(id, s)| {
            let v = if span > 0.0 { (s - lo) / span } else { 0.5 };
            (id.clone(), v)
        })
        .collect()
}

fn ranks(scores: &BTreeMap<String, f64>, created_at: &BTreeMap<String, i64>) -> BTreeMap<String, f64> {
    order_scores(scores, created_at)
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e.record_id, (i + 1) as f64))
        .collect()
}

/// Fuses a lexical and a dense score map defined over the same record ids.
pub fn hybrid_rank(
    lexical: &BTreeMap<String, f64>,
    dense: &BTreeMap<String, f64>,
    fusion: Fusion,
    created_at: &BTreeMap<String, i64>,
) -> Result<Ranking, RetrievalError> {
    if !lexical.keys().eq(dense.keys()) {
        return Err(RetrievalError::KeySetMismatch);
    }
    let w = fusion.weight();
    if !(0.0..=1.0).contains(&w) {
        return Err(RetrievalError::BadWeight(w));
    }
    let fused: BTreeMap<String, f64> = match fusion {
        Fusion::MinMax { weight } => {
            let ln = min_max(lexical);
            let dn = min_max(dense);
            ln.iter().map(|(id, l)| (id.clone(), weight * l + (1.0 - weight) * dn[id])).collect()
        }
        Fusion::Rrf { weight, k } => {
            let lr = ranks(lexical, created_at);
            let dr = ranks(dense, created_at);
            lr.iter()
                .map(|(id, r)| (id.clone(), weight / (k + r) + (1.0 - weight) / (k + dr[id])))
                .collect()
        }
    };
    Ok(Ranking { entries: order_scores(&fused, created_at), query_text: String::new(), strategy: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn top_in_both_is_top_in_fusion() {
        let lex = map(&[("a", 3.0), ("b", 1.0), ("c", 0.0)]);
        let den = map(&[("a", 0.9), ("b", 0.95), ("c", 0.1)]);
        let den2 = map(&[("a", 0.99), ("b", 0.5), ("c", 0.1)]);
        let r = hybrid_rank(&lex, &den2, Fusion::default(), &BTreeMap::new()).unwrap();
        assert_eq!(r.entries[0].record_id, "a");
        assert!(hybrid_rank(&lex, &den, Fusion::default(), &BTreeMap::new()).is_ok());
    }

    #[test]
    fn weight_one_follows_lexical_order() {
        let lex = map(&[("a", 0.2), ("b", 5.0), ("c", 1.0), ("d", 0.0)]);
        let den = map(&[("a", 0.9), ("b", -0.5), ("c", 0.0), ("d", 0.3)]);
        let r = hybrid_rank(&lex, &den, Fusion::MinMax { weight: 1.0 }, &BTreeMap::new()).unwrap();
        assert_eq!(r.ids(), vec!["b", "c", "a", "d"]);
    }

    #[test]
    fn five_record_fixture_matches_brute_force() {
        let lex = map(&[("r1", 2.0), ("r2", 0.0), ("r3", 1.0), ("r4", 4.0), ("r5", 0.5)]);
        let den = map(&[("r1", 0.1), ("r2", 0.8), ("r3", 0.6), ("r4", -0.2), ("r5", 0.3)]);
        // lexical min 0 max 4, dense min -0.2 max 0.8
        let brute = |l: f64, d: f64| 0.5 * (l / 4.0) + 0.5 * ((d + 0.2) / 1.0);
        let mut expected: Vec<(&str, f64)> =
            ["r1", "r2", "r3", "r4", "r5"].iter().map(|id| (*id, brute(lex[*id], den[*id]))).collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
        let r = hybrid_rank(&lex, &den, Fusion::default(), &BTreeMap::new()).unwrap();
        let ids: Vec<&str> = expected.iter().map(|e| e.0).collect();
        assert_eq!(r.ids(), ids);
        for (e, got) in expected.iter().zip(&r.entries) {
            assert!((e.1 - got.score).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_maps_normalize_to_half_and_ties_prefer_recency() {
        let lex = map(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        let den = map(&[("a", 0.2), ("b", 0.2), ("c", 0.2)]);
        let created: BTreeMap<String, i64> = [("a", 10), ("b", 30), ("c", 30)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let r = hybrid_rank(&lex, &den, Fusion::default(), &created).unwrap();
        assert!(r.entries.iter().all(|e| e.score == 0.5));
        assert_eq!(r.ids(), vec!["b", "c", "a"]);
    }

    #[test]
    fn key_set_mismatch_and_bad_weight() {
        let lex = map(&[("a", 1.0)]);
        let den = map(&[("b", 1.0)]);
        assert!(matches!(hybrid_rank(&lex, &den, Fusion::default(), &BTreeMap::new()), Err(RetrievalError::KeySetMismatch)));
        assert!(matches!(
            hybrid_rank(&lex, &lex, Fusion::MinMax { weight: 1.5 }, &BTreeMap::new()),
            Err(RetrievalError::BadWeight(_))
        ));
    }

    #[test]
    fn rrf_prefers_consensus() {
        let lex = map(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let den = map(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]);
        let r = hybrid_rank(&lex, &den, Fusion::Rrf { weight: 0.5, k: 60.0 }, &BTreeMap::new()).unwrap();
        assert_eq!(r.entries[0].record_id, "a");
    }

    proptest! {
        #[test]
        fn order_invariant_under_positive_affine_transform(
            vals in proptest::collection::vec((-10.0f64..10.0, -1.0f64..1.0), 2..10),
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
            w in 0.0f64..=1.0,
        ) {
            let lex: BTreeMap<String, f64> = vals.iter().enumerate().map(|(i, v)| (format!("r{i}"), v.0)).collect();
            let den: BTreeMap<String, f64> = vals.iter().enumerate().map(|(i, v)| (format!("r{i}"), v.1)).collect();
            let lex2: BTreeMap<String, f64> = lex.iter().map(|(k, v)| (k.clone(), v * scale + shift)).collect();
            let a = hybrid_rank(&lex, &den, Fusion::MinMax { weight: w }, &BTreeMap::new()).unwrap();
            let b = hybrid_rank(&lex2, &den, Fusion::MinMax { weight: w }, &BTreeMap::new()).unwrap();
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert!((x.score - y.score).abs() < 1e-9);
            }
        }
    }
}
