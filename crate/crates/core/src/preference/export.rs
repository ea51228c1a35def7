//! DPO-style JSONL export and the training manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{PairContext, PairKind, PreferenceError, PreferencePair};
use crate::gateway::RenderedPrompt;
use crate::pipeline::io::{read_json, read_jsonl, write_json, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoMetadata {
    pub pair_id: String,
    pub kind: PairKind,
    pub instance_id: String,
    pub context: PairContext,
    pub scores: Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub chosen: f64,
    pub rejected: f64,
    pub margin: f64,
}

/// One line of a preference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoLine {
    pub prompt: RenderedPrompt,
    pub chosen: String,
    pub rejected: String,
    pub metadata: DpoMetadata,
}

impl From<&PreferencePair> for DpoLine {
    fn from(p: &PreferencePair) -> Self {
        DpoLine {
            prompt: p.prompt.clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            metadata: DpoMetadata {
                pair_id: p.pair_id.clone(),
                kind: p.kind,
                instance_id: p.instance_id.clone(),
                context: p.context.clone(),
                scores: Scores { chosen: p.chosen_score, rejected: p.rejected_score, margin: p.margin },
            },
        }
    }
}

impl From<DpoLine> for PreferencePair {
    fn from(l: DpoLine) -> Self {
        PreferencePair {
            pair_id: l.metadata.pair_id,
            kind: l.metadata.kind,
            instance_id: l.metadata.instance_id,
            context: l.metadata.context,
            prompt: l.prompt,
            chosen: l.chosen,
            rejected: l.rejected,
            chosen_score: l.metadata.scores.chosen,
            rejected_score: l.metadata.scores.rejected,
            margin: l.metadata.scores.margin,
        }
    }
}

/// Advisory settings for an external preference trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparams {
    pub base_model: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_scheduler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
    pub beta: f64,
    pub epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<u32>,
}

impl TrainingHyperparams {
    pub fn profiler() -> Self {
        Self {
            base_model: "Llama-3.1-8B-Instruct".into(),
            lora_rank: 32,
            lora_alpha: 64,
            optimizer: Some("AdamW".into()),
            learning_rate: 5e-7,
            lr_scheduler: Some("linear".into()),
            warmup_ratio: Some(0.05),
            batch_size: Some(64),
            beta: 0.1,
            epochs: 3,
            max_seq_len: Some(16384),
        }
    }

    pub fn querygen() -> Self {
        Self {
            base_model: "Llama-3.1-8B-Instruct".into(),
            lora_rank: 16,
            lora_alpha: 32,
            optimizer: None,
            learning_rate: 2e-5,
            lr_scheduler: None,
            warmup_ratio: None,
            batch_size: None,
            beta: 0.3,
            epochs: 3,
            max_seq_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindManifest {
    pub file: String,
    pub count: usize,
    pub instances: usize,
    /// Pairs whose chosen and rejected texts are identical strings.
    pub identical_text_pairs: usize,
    /// Distinct (chosen, rejected) text combinations.
    pub distinct_text_pairs: usize,
    pub config: serde_json::Value,
    pub training: TrainingHyperparams,
}

/// `manifest.json`, keyed by pair kind.
pub type Manifest = BTreeMap<PairKind, KindManifest>;

/// Writes `pairs` to `path`, one line each, and returns the manifest entry.
pub fn export_dpo(
    pairs: &[PreferencePair],
    path: &Path,
    kind: PairKind,
    config: serde_json::Value,
    training: TrainingHyperparams,
) -> Result<KindManifest, PreferenceError> {
    if pairs.iter().any(|p| p.kind != kind) {
        return Err(PreferenceError::MixedKinds);
    }
    if pairs.is_empty() {
        warn!(kind = %kind, path = %path.display(), "no preference pairs to export");
    }
    write_jsonl(path, pairs.iter().map(DpoLine::from))?;
    let instances: BTreeSet<&str> = pairs.iter().map(|p| p.instance_id.as_str()).collect();
    let distinct: BTreeSet<(&str, &str)> = pairs.iter().map(|p| (p.chosen.as_str(), p.rejected.as_str())).collect();
    Ok(KindManifest {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        count: pairs.len(),
        instances: instances.len(),
        identical_text_pairs: pairs.iter().filter(|p| p.chosen == p.rejected).count(),
        distinct_text_pairs: distinct.len(),
        config,
        training,
    })
}

pub fn read_dpo(path: &Path) -> Result<Vec<PreferencePair>, PreferenceError> {
    Ok(read_jsonl::<DpoLine>(path)?.into_iter().map(PreferencePair::from).collect())
}

/// Inserts `entry` into the manifest at `path`, keeping other kinds.
pub fn write_manifest(path: &Path, kind: PairKind, entry: KindManifest) -> Result<Manifest, PreferenceError> {
    let mut manifest: Manifest = if path.exists() { read_json(path)? } else { Manifest::new() };
    manifest.insert(kind, entry);
    write_json(path, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize, kind: PairKind) -> PreferencePair {
        PreferencePair {
            pair_id: format!("a{i}|b{i}"),
            kind,
            instance_id: format!("inst{}", i % 3),
            context: PairContext { post: "post".into(), record_ids: Some(vec!["r1".into()]), question: None },
            prompt: RenderedPrompt { system: "sys".into(), user: "usr\nline".into() },
            chosen: format!("• good {}", i % 2),
            rejected: "• bad".into(),
            chosen_score: 0.9,
            rejected_score: 0.1 + i as f64 * 0.01,
            margin: 0.8 - i as f64 * 0.01,
        }
    }

    #[test]
    fn round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<_> = (0..16).map(|i| pair(i, PairKind::Profiler)).collect();
        let path = dir.path().join("prefs_profiler.jsonl");
        let m = export_dpo(&pairs, &path, PairKind::Profiler, serde_json::json!({"k": 4}), TrainingHyperparams::profiler()).unwrap();
        assert_eq!((m.count, m.instances, m.distinct_text_pairs), (16, 3, 2));
        assert_eq!(read_dpo(&path).unwrap(), pairs);
        let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
        for key in ["prompt", "chosen", "rejected", "metadata"] {
            assert!(line.get(key).is_some());
        }
        assert!(line["metadata"]["scores"]["chosen"].is_number());

        let mpath = dir.path().join("manifest.json");
        write_manifest(&mpath, PairKind::Profiler, m).unwrap();
        let q = export_dpo(&[], &dir.path().join("prefs_querygen.jsonl"), PairKind::Querygen, serde_json::json!({}), TrainingHyperparams::querygen()).unwrap();
        assert_eq!(q.count, 0);
        let merged = write_manifest(&mpath, PairKind::Querygen, q).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("prefs_querygen.jsonl")).unwrap(), "");
    }

    #[test]
    fn mixed_kinds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![pair(0, PairKind::Profiler), pair(1, PairKind::Querygen)];
        let r = export_dpo(&pairs, &dir.path().join("x.jsonl"), PairKind::Profiler, serde_json::Value::Null, TrainingHyperparams::profiler());
        assert!(matches!(r, Err(PreferenceError::MixedKinds)));
    }
}
