//! `report.json` and per-table CSV files.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::io::{write_atomic, write_json};

/// One end-to-end configuration cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndRow {
    pub predictor: String,
    pub strategy: String,
    pub context: String,
    pub profiler: String,
    pub f1_positive: f64,
    pub f1_macro: f64,
    #[serde(default)]
    pub auc: Option<f64>,
    pub n: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub strategy: String,
    pub mean_ncg_at_5: f64,
    pub mean_ndcg_at_5: f64,
    pub n_instances: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub predictor_a: String,
    pub predictor_b: String,
    pub topk_overlap: f64,
    #[serde(default)]
    pub spearman_rho: Option<f64>,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval: Vec<RetrievalRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub end_to_end: Vec<EndToEndRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreement: Vec<AgreementRow>,
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

impl MetricReport {
    /// Appends the sections of `other`.
    pub fn merge(&mut self, other: MetricReport) {
        self.retrieval.extend(other.retrieval);
        self.end_to_end.extend(other.end_to_end);
        self.agreement.extend(other.agreement);
    }

    /// Writes `report.json` plus one CSV per non-empty section.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        write_json(&dir.join("report.json"), self)?;
        if !self.retrieval.is_empty() {
            write_atomic(&dir.join("table_retrieval.csv"), &csv_bytes(&self.retrieval)?)?;
        }
        if !self.end_to_end.is_empty() {
            write_atomic(&dir.join("table_end_to_end.csv"), &csv_bytes(&self.end_to_end)?)?;
        }
        if !self.agreement.is_empty() {
            write_atomic(&dir.join("table_agreement.csv"), &csv_bytes(&self.agreement)?)?;
        }
        Ok(())
    }
}
