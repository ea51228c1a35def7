use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};
use crate::seed::{self, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// Serialized as `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn of(&self, instance_id: &str) -> Option<Split> {
        self.assignment.get(instance_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|s| **s == split).count()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment.iter().filter(|(_, s)| **s == split).map(|(id, _)| id.as_str()).collect()
    }
}

/// Assigns every instance to train/validation/test.
///
/// Instance ids are sorted, shuffled with a seeded stream, and cut at the
/// rounded cumulative ratio boundaries, so the result depends only on the id
/// set, the ratios and the seed.
pub fn split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    let mut ids: Vec<&str> = corpus.instances.iter().map(|i| i.instance_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = seed::rng(seed, &[Key::Str("split")]);
    ids.shuffle(&mut rng);

    let n = ids.len() as f64;
    let train_end = (n * ratios[0]).round() as usize;
    let val_end = ((n * (ratios[0] + ratios[1])).round() as usize).max(train_end).min(ids.len());

    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < train_end {
                Split::Train
            } else if i < val_end {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment { seed, ratios, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::instance;

    fn corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| instance(&format!("inst{i:05}"), 1, 1, 1)).collect())
    }

    #[test]
    fn ten_instances_split_8_1_1() {
        let s = split(&corpus(10), [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.count(Split::Train), s.count(Split::Validation), s.count(Split::Test)), (8, 1, 1));
    }

    #[test]
    fn deterministic_given_seed() {
        let c = corpus(50);
        let a = serde_json::to_string(&split(&c, [0.8, 0.1, 0.1], 7).unwrap()).unwrap();
        let b = serde_json::to_string(&split(&c, [0.8, 0.1, 0.1], 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = serde_json::to_string(&split(&c, [0.8, 0.1, 0.1], 8).unwrap()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn independent_of_instance_order() {
        let c = corpus(30);
        let mut rev = c.clone();
        rev.instances.reverse();
        assert_eq!(split(&c, [0.8, 0.1, 0.1], 3).unwrap(), split(&rev, [0.8, 0.1, 0.1], 3).unwrap());
    }

    #[test]
    fn table_four_counts() {
        let s = split(&corpus(1676), [0.8, 0.1, 0.1], 42).unwrap();
        let counts = [s.count(Split::Train), s.count(Split::Validation), s.count(Split::Test)];
        for (got, want) in counts.iter().zip([1341usize, 167, 168]) {
            assert!(got.abs_diff(want) <= 1, "{counts:?}");
        }
        assert_eq!(counts.iter().sum::<usize>(), 1676);
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(matches!(split(&corpus(3), [0.5, 0.1, 0.1], 1), Err(CorpusError::BadRatios(_))));
        assert!(matches!(split(&corpus(3), [1.2, -0.1, -0.1], 1), Err(CorpusError::BadRatios(_))));
    }
}
