//! Classification, ranking and agreement metrics.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    #[default]
    Positive,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    #[default]
    Linear,
    Exponential,
}

impl Gain {
    fn apply(self, rel: f64) -> f64 {
        match self {
            Gain::Linear => rel,
            Gain::Exponential => rel.exp2() - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_pairs(preds: &[u8], labels: &[u8]) -> Result<Self, MetricError> {
        if preds.len() != labels.len() {
            return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
        }
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            c.add(p != 0, y != 0);
        }
        Ok(c)
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn class_f1(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
        let denom = 2 * tp + fp + fn_;
        (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
    }

    /// Positive-class F1, or the mean F1 of the classes that occur among
    /// predictions or labels.
    pub fn f1(&self, mode: F1Mode) -> f64 {
        let pos = Self::class_f1(self.tp, self.fp, self.fn_);
        match mode {
            F1Mode::Positive => pos.unwrap_or(0.0),
            F1Mode::Macro => {
                let neg = Self::class_f1(self.tn, self.fn_, self.fp);
                let present: Vec<f64> = [pos, neg].into_iter().flatten().collect();
                if present.is_empty() {
                    0.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                }
            }
        }
    }
}

pub fn f1(preds: &[u8], labels: &[u8], mode: F1Mode) -> Result<f64, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(Confusion::from_pairs(preds, labels)?.f1(mode))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = average_ranks(scores)?;
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y != 0).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// 1-based fractional ranks, ascending, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NotANumber);
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    Ok(ranks)
}

fn relevance_of(ranking: &[&str], relevance: &BTreeMap<String, f64>) -> Result<Vec<f64>, MetricError> {
    ranking
        .iter()
        .map(|id| relevance.get(*id).copied().ok_or_else(|| MetricError::MissingRelevance(id.to_string())))
        .collect()
}

fn ideal(relevance: &BTreeMap<String, f64>, k: usize) -> Vec<f64> {
    let mut all: Vec<f64> = relevance.values().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.truncate(k);
    all
}

fn dcg(rels: &[f64], gain: Gain) -> f64 {
    rels.iter().enumerate().map(|(i, &r)| gain.apply(r) / ((i + 2) as f64).log2()).sum()
}

/// DCG of the first `k` ranked ids over the DCG of the best possible order
/// of the whole relevance map; 0 when the ideal is 0.
pub fn ndcg_at_k(ranking: &[&str], relevance: &BTreeMap<String, f64>, k: usize, gain: Gain) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::BadK);
    }
    let top = &ranking[..ranking.len().min(k)];
    let rels = relevance_of(top, relevance)?;
    if let Some(bad) = relevance.values().find(|r| **r < 0.0 || r.is_nan()) {
        return Err(MetricError::NegativeRelevance(*bad));
    }
    let idcg = dcg(&ideal(relevance, k), gain);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg(&rels, gain) / idcg).min(1.0))
}

/// Undiscounted gain of the first `k` ranked ids over the best achievable.
pub fn ncg_at_k(ranking: &[&str], relevance: &BTreeMap<String, f64>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::BadK);
    }
    let top = &ranking[..ranking.len().min(k)];
    let got: f64 = relevance_of(top, relevance)?.iter().sum();
    if let Some(bad) = relevance.values().find(|r| **r < 0.0 || r.is_nan()) {
        return Err(MetricError::NegativeRelevance(*bad));
    }
    let best: f64 = ideal(relevance, k).iter().sum();
    if best == 0.0 {
        return Ok(0.0);
    }
    Ok((got / best).min(1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(MetricError::TooFewPoints(a.len()));
    }
    pearson(&average_ranks(a)?, &average_ranks(b)?)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ids of the `k` highest scores, ties to the smaller id.
pub fn top_k(scores: &BTreeMap<String, f64>, k: usize) -> Vec<&str> {
    let mut v: Vec<(&String, f64)> = scores.iter().map(|(k, s)| (k, *s)).collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(k).map(|(id, _)| id.as_str()).collect()
}

pub fn topk_overlap(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, k: usize) -> Result<f64, MetricError> {
    if !a.keys().eq(b.keys()) {
        return Err(MetricError::KeySetMismatch);
    }
    if k == 0 {
        return Err(MetricError::BadK);
    }
    if a.len() < k {
        return Err(MetricError::TooFewPoints(a.len()));
    }
    let ta = top_k(a, k);
    let tb = top_k(b, k);
    Ok(ta.iter().filter(|id| tb.contains(id)).count() as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1], F1Mode::Positive).unwrap(), 1.0);
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1], F1Mode::Macro).unwrap(), 1.0);
        assert_eq!(f1(&[1, 1], &[1, 1], F1Mode::Macro).unwrap(), 1.0);
        // tp 1, fp 1, fn 1
        assert_eq!(f1(&[1, 1, 0], &[1, 0, 1], F1Mode::Positive).unwrap(), 0.5);
        assert!((f1(&[1, 0, 0], &[1, 1, 0], F1Mode::Macro).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1(&[0, 0], &[1, 0], F1Mode::Positive).unwrap(), 0.0);
        assert!(matches!(f1(&[1], &[1, 0], F1Mode::Macro), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.4, 0.6, 0.1], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(MetricError::SingleClass)));
    }

    #[test]
    fn ndcg_cases() {
        let r = rel(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &r, 3, Gain::Linear).unwrap(), 1.0);
        let dcg = 3.0 + 1.0 / 3f64.log2() + 2.0 / 2.0;
        let idcg = 3.0 + 2.0 / 3f64.log2() + 1.0 / 2.0;
        let got = ndcg_at_k(&["a", "c", "b"], &r, 3, Gain::Linear).unwrap();
        assert!((got - dcg / idcg).abs() < 1e-12);
        let zero = rel(&[("a", 0.0), ("b", 0.0)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &zero, 2, Gain::Linear).unwrap(), 0.0);
        assert!(matches!(ndcg_at_k(&["z"], &r, 1, Gain::Linear), Err(MetricError::MissingRelevance(_))));
    }

    #[test]
    fn six_record_fixture() {
        let r = rel(&[("r1", 0.9), ("r2", 0.6), ("r3", 0.3), ("r4", 0.1), ("r5", 0.1), ("r6", 0.0)]);
        let ranking = ["r2", "r1", "r3", "r4", "r5"];
        let d = 0.6 + 0.9 / 3f64.log2() + 0.3 / 2.0 + 0.1 / 5f64.log2() + 0.1 / 6f64.log2();
        let i = 0.9 + 0.6 / 3f64.log2() + 0.3 / 2.0 + 0.1 / 5f64.log2() + 0.1 / 6f64.log2();
        assert!((ndcg_at_k(&ranking, &r, 5, Gain::Linear).unwrap() - d / i).abs() < 1e-12);
    }

    #[test]
    fn ncg_cases() {
        let r = rel(&[("a", 1.0), ("b", 1.0), ("c", 0.0), ("d", 0.0)]);
        assert_eq!(ncg_at_k(&["b", "a"], &r, 2).unwrap(), 1.0);
        assert_eq!(ncg_at_k(&["a", "c"], &r, 2).unwrap(), 0.5);
        assert_eq!(ncg_at_k(&["c"], &rel(&[("c", 0.0)]), 1).unwrap(), 0.0);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance)));
    }

    #[test]
    fn overlap_cases() {
        let a = rel(&[("a", 9.0), ("b", 8.0), ("c", 7.0), ("d", 6.0), ("e", 5.0), ("f", 1.0), ("g", 0.0), ("h", 0.0), ("i", 0.0), ("j", 0.0)]);
        assert_eq!(topk_overlap(&a, &a, 5).unwrap(), 1.0);
        let b = rel(&[("a", 0.0), ("b", 0.0), ("c", 0.0), ("d", 0.0), ("e", 0.0), ("f", 5.0), ("g", 5.0), ("h", 5.0), ("i", 5.0), ("j", 5.0)]);
        assert_eq!(topk_overlap(&a, &b, 5).unwrap(), 0.0);
        let c = rel(&[("a", 9.0), ("b", 9.0), ("c", 0.0), ("d", 0.0), ("e", 0.0), ("f", 5.0), ("g", 5.0), ("h", 5.0), ("i", 0.0), ("j", 0.0)]);
        assert!((topk_overlap(&a, &c, 5).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(topk_overlap(&a, &rel(&[("a", 1.0)]), 5), Err(MetricError::KeySetMismatch)));
    }

    proptest! {
        #[test]
        fn rank_metrics_invariant_under_monotone_maps(xs in prop::collection::vec(-5.0f64..5.0, 4..12), labels in prop::collection::vec(0u8..2, 4..12)) {
            let n = xs.len().min(labels.len());
            let (xs, labels) = (&xs[..n], &labels[..n]);
            let ys: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            if labels.contains(&0) && labels.contains(&1) {
                prop_assert!((roc_auc(xs, labels).unwrap() - roc_auc(&ys, labels).unwrap()).abs() < 1e-12);
            }
            let zs: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
            if let (Ok(r1), Ok(r2)) = (spearman_rho(xs, &zs), spearman_rho(&ys, &zs)) {
                prop_assert!((r1 - r2).abs() < 1e-9);
            }
        }

        #[test]
        fn gains_bounded(rels in prop::collection::vec(0.0f64..1.0, 1..12), k in 1usize..8) {
            let map: BTreeMap<String, f64> = rels.iter().enumerate().map(|(i, r)| (format!("r{i:02}"), *r)).collect();
            let ids: Vec<&str> = map.keys().map(String::as_str).rev().collect();
            let n = ndcg_at_k(&ids, &map, k, Gain::Linear).unwrap();
            let c = ncg_at_k(&ids, &map, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&c));
        }
    }
}
