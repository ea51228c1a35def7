//! Retrieval evaluation, end-to-end inference and report assembly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{artifact, io, ContextKind, Pipeline, PipelineError, State, RETRIEVAL_REPORT_FILE};
use crate::corpus::{PersuasionInstance, Split, UserRecord};
use crate::evalkit::{
    ncg_at_k, ndcg_at_k, roc_auc, spearman_rho, topk_overlap, AgreementRow, Confusion, EndToEndRow, F1Mode, Gain,
    MetricError, MetricReport, RetrievalRow,
};
use crate::gateway::{GatewayError, PredictionContext};
use crate::generation::{generate_profile, inference_query, ProfileRequest};
use crate::retrieval::QueryStrategy;
use crate::seed::{self, Key};
use crate::utility::UtilityTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentPrediction {
    pub comment_id: String,
    pub label: u8,
    pub predicted: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_score: Option<f64>,
}

/// One line of `predictions_<tag>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub predictions: Vec<CommentPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `e2e_<tag>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eOutcome {
    pub tag: String,
    pub split: Split,
    pub row: EndToEndRow,
    pub n_instances: usize,
    pub failed_instances: Vec<String>,
    pub failure_rate: f64,
}

impl Pipeline {
    /// Mean NCG@k and NDCG@k of each strategy over `split`, with record
    /// utility as graded relevance. The random strategy is averaged over
    /// `random_runs` seeds.
    pub fn eval_retrieval(&self, split: Split) -> Result<MetricReport, PipelineError> {
        let state = self.state()?;
        let instances = state.instances(&[split]);
        let utility = self.utility()?;
        for inst in &instances {
            if !utility.contains_key(&inst.instance_id) {
                return Err(PipelineError::MissingUtility(inst.instance_id.clone()));
            }
        }
        let cfg = self.config();
        let mut rows = Vec::new();

        let mut ncg_runs = Vec::new();
        let mut ndcg_runs = Vec::new();
        for run in 0..cfg.retrieval.random_runs {
            let strategy = QueryStrategy::Random { seed: seed::derive(cfg.seed, &[Key::Str("random-run"), Key::Int(run as u64)]) };
            let (ncg, ndcg) = self.mean_gains(&state, &instances, &utility, strategy)?;
            ncg_runs.push(ncg);
            ndcg_runs.push(ndcg);
        }
        rows.push(RetrievalRow {
            strategy: "random".into(),
            mean_ncg_at_5: mean(&ncg_runs),
            mean_ndcg_at_5: mean(&ndcg_runs),
            n_instances: instances.len(),
            runs: ncg_runs.len(),
        });
        for strategy in [QueryStrategy::LexicalPost, QueryStrategy::DensePost, QueryStrategy::Hyde, QueryStrategy::Generated] {
            let (ncg, ndcg) = self.mean_gains(&state, &instances, &utility, strategy)?;
            rows.push(RetrievalRow {
                strategy: strategy.name().into(),
                mean_ncg_at_5: ncg,
                mean_ndcg_at_5: ndcg,
                n_instances: instances.len(),
                runs: 1,
            });
        }
        let report = MetricReport { retrieval: rows, ..Default::default() };
        let path = self.out(RETRIEVAL_REPORT_FILE);
        artifact(&path, io::write_json(&path, &report))?;
        for r in &report.retrieval {
            info!(strategy = %r.strategy, ncg = r.mean_ncg_at_5, ndcg = r.mean_ndcg_at_5, "retrieval");
        }
        Ok(report)
    }

    fn mean_gains(
        &self,
        state: &State,
        instances: &[&PersuasionInstance],
        utility: &BTreeMap<String, UtilityTable>,
        strategy: QueryStrategy,
    ) -> Result<(f64, f64), PipelineError> {
        let k = self.config().retrieval.k;
        let per: Result<Vec<(f64, f64)>, PipelineError> = self.install(|| {
            instances
                .par_iter()
                .map(|inst| {
                    let rel = utility[&inst.instance_id].utilities();
                    let ranking = self.rank_for(state, inst, strategy)?.0;
                    let ids: Vec<&str> = ranking.iter().map(String::as_str).collect();
                    Ok((ncg_at_k(&ids, &rel, k)?, ndcg_at_k(&ids, &rel, k, Gain::Linear)?))
                })
                .collect()
        });
        let per = per?;
        let ncg: Vec<f64> = per.iter().map(|p| p.0).collect();
        let ndcg: Vec<f64> = per.iter().map(|p| p.1).collect();
        Ok((mean(&ncg), mean(&ndcg)))
    }

    /// Top-k record ids for `inst` and the query text used, if any.
    fn rank_for(
        &self,
        state: &State,
        inst: &PersuasionInstance,
        strategy: QueryStrategy,
    ) -> Result<(Vec<String>, Option<String>), PipelineError> {
        let cfg = self.config();
        let retriever = self.retriever(inst, &state.vectors)?;
        let query = match strategy {
            QueryStrategy::Generated => {
                let base = seed::api_seed(cfg.seed, &[Key::Str("inference-query"), Key::Str(&inst.instance_id)]);
                Some(inference_query(&state.roles.querygen, self.prompts(), &inst.instance_id, &inst.post_text, base)?)
            }
            _ => None,
        };
        let ranking = retriever.retrieve(
            strategy,
            &inst.post_text,
            cfg.retrieval.k,
            &state.roles.embedder,
            &state.roles.querygen,
            self.prompts(),
            query.as_deref(),
        )?;
        let query = query.or_else(|| Some(ranking.query_text.clone()).filter(|q| !q.is_empty()));
        Ok((ranking.entries.into_iter().map(|e| e.record_id).collect(), query))
    }

    /// Retrieval, profiling and view-change prediction over `split`.
    ///
    /// Instances that fail are recorded and left out of the metrics. The
    /// outputs are written before a [`PipelineError::FailureRate`] is raised.
    pub fn eval_e2e(&self, split: Split, context: ContextKind, strategy: QueryStrategy) -> Result<E2eOutcome, PipelineError> {
        let state = self.state()?;
        let instances = state.instances(&[split]);
        let cfg = self.config();
        let tag = match context {
            ContextKind::None => "none".to_string(),
            c => format!("{}_{}", strategy.name(), c.name()),
        };
        let predictions: Vec<InstancePrediction> = self.install(|| {
            instances
                .par_iter()
                .map(|inst| match self.predict_instance(&state, inst, context, strategy) {
                    Ok(p) => p,
                    Err(e) => {
                        warn!(instance = %inst.instance_id, error = %e, "instance failed");
                        InstancePrediction {
                            instance_id: inst.instance_id.clone(),
                            query: None,
                            retrieved: Vec::new(),
                            profile: None,
                            predictions: Vec::new(),
                            error: Some(e.to_string()),
                        }
                    }
                })
                .collect()
        });
        let path = self.out(&format!("predictions_{tag}.jsonl"));
        artifact(&path, io::write_jsonl(&path, &predictions))?;

        let mut confusion = Confusion::default();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut failed = Vec::new();
        for p in &predictions {
            if p.error.is_some() {
                failed.push(p.instance_id.clone());
                continue;
            }
            for c in &p.predictions {
                confusion.add(c.predicted == 1, c.label == 1);
                if let Some(s) = c.yes_score {
                    scores.push(s);
                    labels.push(c.label);
                }
            }
        }
        let auc = if cfg.inference.scoring.enabled && scores.len() == confusion.total() as usize {
            match roc_auc(&scores, &labels) {
                Ok(a) => Some(a),
                Err(MetricError::SingleClass | MetricError::Empty) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let row = EndToEndRow {
            predictor: state.roles.predictor.model_name().to_string(),
            strategy: if context == ContextKind::None { "none".into() } else { strategy.name().into() },
            context: context.name().into(),
            profiler: if context == ContextKind::Profile { state.roles.profiler.model_name().into() } else { "-".into() },
            f1_positive: confusion.f1(F1Mode::Positive),
            f1_macro: confusion.f1(F1Mode::Macro),
            auc,
            n: confusion.total() as usize,
            failures: failed.len(),
        };
        let total = predictions.len();
        let failure_rate = if total == 0 { 0.0 } else { failed.len() as f64 / total as f64 };
        let outcome = E2eOutcome { tag: tag.clone(), split, row, n_instances: total, failed_instances: failed, failure_rate };
        let path = self.out(&format!("e2e_{tag}.json"));
        artifact(&path, io::write_json(&path, &outcome))?;
        info!(
            tag = %tag,
            f1_positive = outcome.row.f1_positive,
            f1_macro = outcome.row.f1_macro,
            failed = outcome.failed_instances.len(),
            "end-to-end evaluation"
        );
        if failure_rate > cfg.inference.max_failure_rate {
            return Err(PipelineError::FailureRate {
                failed: outcome.failed_instances.len(),
                total,
                rate: failure_rate,
                max: cfg.inference.max_failure_rate,
            });
        }
        Ok(outcome)
    }

    fn predict_instance(
        &self,
        state: &State,
        inst: &PersuasionInstance,
        context: ContextKind,
        strategy: QueryStrategy,
    ) -> Result<InstancePrediction, PipelineError> {
        let (retrieved, query) = match context {
            ContextKind::None => (Vec::new(), None),
            _ => self.rank_for(state, inst, strategy)?,
        };
        let records: Vec<&UserRecord> = retrieved.iter().filter_map(|id| inst.record(id)).collect();
        let (ctx, profile) = match context {
            ContextKind::None => (PredictionContext::None, None),
            ContextKind::History => (PredictionContext::History(records.iter().map(|r| r.text.clone()).collect()), None),
            ContextKind::Profile => {
                let req = ProfileRequest {
                    profile_id: format!("{}:inf", inst.instance_id),
                    instance_id: &inst.instance_id,
                    post: &inst.post_text,
                    records: &records,
                    temperature: 0.0,
                    seed: None,
                    sample_index: 0,
                };
                let p = generate_profile(&state.roles.profiler, self.prompts(), &req)?;
                (PredictionContext::Profile(p.text.clone()), Some(p.text))
            }
        };
        let scoring = self.config().inference.scoring;
        let predictions: Result<Vec<CommentPrediction>, GatewayError> = inst
            .comments
            .par_iter()
            .map(|c| {
                let v = state.roles.predictor.predict_view_change(self.prompts(), &inst.post_text, &c.text, &ctx, scoring)?;
                Ok(CommentPrediction {
                    comment_id: c.comment_id.clone(),
                    label: c.label,
                    predicted: v.value.as_label(),
                    yes_score: v.yes_score,
                })
            })
            .collect();
        Ok(InstancePrediction {
            instance_id: inst.instance_id.clone(),
            query,
            retrieved,
            profile,
            predictions: predictions?,
            error: None,
        })
    }

    /// Collects the retrieval and end-to-end results found in the output
    /// directory, adds agreement rows for every pair of `utility_files`, and
    /// writes `report.json` with one CSV per table.
    pub fn report(&self, utility_files: &[PathBuf]) -> Result<MetricReport, PipelineError> {
        let mut report = MetricReport::default();
        let retrieval = self.out(RETRIEVAL_REPORT_FILE);
        if retrieval.exists() {
            report.merge(artifact(&retrieval, io::read_json(&retrieval))?);
        }
        let dir = &self.config().output_dir;
        let mut e2e: Vec<PathBuf> = artifact(dir, std::fs::read_dir(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("e2e_") && n.ends_with(".json"))
            })
            .collect();
        e2e.sort();
        for p in e2e {
            let o: E2eOutcome = artifact(&p, io::read_json(&p))?;
            report.end_to_end.push(o.row);
        }
        report.agreement = agreement_rows(utility_files, self.config().retrieval.k)?;
        artifact(dir, report.write(dir))?;
        Ok(report)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Top-k overlap and Spearman correlation between the utilities two
/// predictors assign to the same pools, averaged over shared instances.
pub fn agreement_rows(files: &[PathBuf], k: usize) -> Result<Vec<AgreementRow>, PipelineError> {
    let mut tables = Vec::new();
    for f in files {
        let rows: Vec<UtilityTable> = artifact(f, io::read_jsonl(f))?;
        let map: BTreeMap<String, BTreeMap<String, f64>> = rows.into_iter().map(|t| (t.instance_id.clone(), t.utilities())).collect();
        tables.push((label_of(f), map));
    }
    let mut out = Vec::new();
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            let (na, a) = &tables[i];
            let (nb, b) = &tables[j];
            let mut overlaps = Vec::new();
            let mut rhos = Vec::new();
            for (iid, ua) in a {
                let Some(ub) = b.get(iid) else { continue };
                overlaps.push(topk_overlap(ua, ub, k)?);
                let xa: Vec<f64> = ua.values().copied().collect();
                let xb: Vec<f64> = ub.values().copied().collect();
                match spearman_rho(&xa, &xb) {
                    Ok(r) => rhos.push(r),
                    Err(MetricError::ZeroVariance | MetricError::TooFewPoints(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            out.push(AgreementRow {
                predictor_a: na.clone(),
                predictor_b: nb.clone(),
                topk_overlap: mean(&overlaps),
                spearman_rho: (!rhos.is_empty()).then(|| mean(&rhos)),
                n_instances: overlaps.len(),
            });
        }
    }
    Ok(out)
}
