//! Stage orchestration over a [`RunConfig`].
//!
//! Every stage reads its inputs from and writes its outputs to the run's
//! output directory. Stages whose inputs are missing build them first, except
//! query-preference construction and retrieval evaluation, which require
//! `utility.jsonl` to exist.

mod config;
mod eval;
pub mod io;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use config::{
    BackendsConfig, ContextKind, CorpusConfig, InferenceConfig, ProfilerPrefConfig, QueryGenPrefConfig, RetrievalConfig,
    RunConfig, TrainingConfig,
};
pub use eval::{CommentPrediction, E2eOutcome, InstancePrediction};
pub use train::TrainingSummary;

use crate::corpus::{
    build_pool, filter_instances, ingest_with, split, Corpus, CorpusError, IngestOptions, IngestReport, PersuasionInstance,
    Split, SplitAssignment,
};
use crate::evalkit::MetricError;
use crate::gateway::{Gateway, GatewayError, OracleHints, PromptSet, Roles};
use crate::generation::GenerationError;
use crate::preference::PreferenceError;
use crate::retrieval::{RetrievalError, Retriever, VectorStore};
use crate::utility::{UtilityError, UtilityTable};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const POOLS_FILE: &str = "pools.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const UTILITY_FILE: &str = "utility.jsonl";
pub const PROFILER_PREFS_FILE: &str = "prefs_profiler.jsonl";
pub const QUERYGEN_PREFS_FILE: &str = "prefs_querygen.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RETRIEVAL_REPORT_FILE: &str = "retrieval_report.json";

const EMBED_BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Artifact {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no utility scores for instance {0}; run score-records first")]
    MissingUtility(String),
    #[error("{failed} of {total} instances failed ({rate:.3} > {max:.3})")]
    FailureRate { failed: usize, total: usize, rate: f64, max: f64 },
    #[error("instance {instance}: {message}")]
    Instance { instance: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub(crate) fn artifact<T>(path: &Path, r: std::io::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|source| PipelineError::Artifact { path: path.to_path_buf(), source })
}

/// `ingest_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub instances_ingested: usize,
    pub instances_kept: usize,
    pub min_history: usize,
    pub report: IngestReport,
}

/// One line of `pools.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub instance_id: String,
    pub split: Split,
    pub pool: Vec<String>,
}

/// Inputs shared by the model-driven stages.
pub struct State {
    /// Instances with their pools attached, in corpus order.
    pub corpus: Corpus,
    pub splits: SplitAssignment,
    pub roles: Roles,
    pub vectors: VectorStore,
}

impl State {
    pub fn instances(&self, splits: &[Split]) -> Vec<&PersuasionInstance> {
        self.corpus.instances.iter().filter(|i| self.splits.of(&i.instance_id).is_some_and(|s| splits.contains(&s))).collect()
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    prompts: PromptSet,
    threads: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        for p in [&cfg.corpus.threads, &cfg.corpus.histories] {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        for b in [&cfg.backends.default, &cfg.backends.predictor, &cfg.backends.profiler, &cfg.backends.querygen, &cfg.backends.embedder]
            .into_iter()
            .flatten()
        {
            b.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if let Some(p) = b.world.as_ref().or(b.fixtures.as_ref()).filter(|p| !p.exists()) {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        for role in ["predictor", "profiler", "querygen", "embedder"] {
            cfg.backends.role(role)?;
        }
        let mut prompts = PromptSet::default();
        if let Some(dir) = &cfg.prompts_dir {
            let n = artifact(dir, prompts.load_overrides(dir))?;
            info!(dir = %dir.display(), templates = n, "prompt overrides loaded");
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = cfg.workers {
            builder = builder.num_threads(w.max(1));
        }
        let threads = builder.build().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self { cfg, prompts, threads })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out(name)
    }

    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.threads.install(f)
    }

    /// Reads both input files, drops instances that fail the eligibility
    /// rules and writes `corpus.jsonl`.
    pub fn ingest(&self) -> Result<Corpus, PipelineError> {
        let c = &self.cfg.corpus;
        let opts = IngestOptions { max_malformed_fraction: c.max_malformed_fraction };
        let (raw, report) = ingest_with(&c.threads, &c.histories, opts)?;
        let ingested = raw.len();
        let corpus = filter_instances(raw, c.min_history);
        if corpus.is_empty() {
            return Err(CorpusError::EmptyCorpus.into());
        }
        info!(ingested, kept = corpus.len(), malformed = report.malformed.len(), "corpus ingested");
        let path = self.out(CORPUS_FILE);
        artifact(&path, io::write_jsonl(&path, &corpus.instances))?;
        let summary =
            IngestSummary { instances_ingested: ingested, instances_kept: corpus.len(), min_history: c.min_history, report };
        let path = self.out(INGEST_REPORT_FILE);
        artifact(&path, io::write_json(&path, &summary))?;
        Ok(corpus)
    }

    pub fn corpus(&self) -> Result<Corpus, PipelineError> {
        let path = self.out(CORPUS_FILE);
        if path.exists() {
            return Ok(Corpus::new(artifact(&path, io::read_jsonl(&path))?));
        }
        self.ingest()
    }

    pub fn split(&self) -> Result<SplitAssignment, PipelineError> {
        let corpus = self.corpus()?;
        let s = split(&corpus, self.cfg.corpus.split_ratios, self.cfg.split_seed())?;
        info!(
            train = s.count(Split::Train),
            validation = s.count(Split::Validation),
            test = s.count(Split::Test),
            "corpus split"
        );
        let path = self.out(SPLITS_FILE);
        artifact(&path, io::write_json(&path, &s))?;
        Ok(s)
    }

    pub fn splits(&self) -> Result<SplitAssignment, PipelineError> {
        let path = self.out(SPLITS_FILE);
        if path.exists() {
            return artifact(&path, io::read_json(&path));
        }
        self.split()
    }

    /// Gateways for the four roles. Oracle backends learn the corpus texts.
    pub fn roles(&self, corpus: &Corpus) -> Result<Roles, PipelineError> {
        let hints = OracleHints::from_corpus(corpus);
        let build = |role: &str| -> Result<Arc<Gateway>, PipelineError> {
            let cfg = self.cfg.backends.role(role)?.clone();
            Ok(Arc::new(Gateway::from_config(cfg, Some(&hints), Some(&self.prompts))?))
        };
        Ok(Roles {
            predictor: build("predictor")?,
            profiler: build("profiler")?,
            querygen: build("querygen")?,
            embedder: build("embedder")?,
        })
    }

    /// Ranks each instance's history against its delta comments and keeps
    /// the leading records as the candidate pool.
    pub fn build_pools(&self) -> Result<Vec<PoolRow>, PipelineError> {
        let corpus = self.corpus()?;
        let splits = self.splits()?;
        let roles = self.roles(&corpus)?;
        let r = &self.cfg.retrieval;
        let c = &self.cfg.corpus;
        let rows: Result<Vec<PoolRow>, PipelineError> = self.install(|| {
            corpus
                .instances
                .par_iter()
                .map(|inst| {
                    let s = splits
                        .of(&inst.instance_id)
                        .ok_or_else(|| PipelineError::Config(format!("{} missing from splits.json", inst.instance_id)))?;
                    let limit = if s == Split::Test && !c.cap_test_pool { usize::MAX } else { c.pool_limit };
                    let retriever = Retriever::new(&inst.instance_id, &inst.full_history, r.k1, r.b)?;
                    let pool = build_pool(inst, &retriever, &roles.embedder, r.fusion, limit)?;
                    Ok(PoolRow { instance_id: inst.instance_id.clone(), split: s, pool })
                })
                .collect()
        });
        let rows = rows?;
        let path = self.out(POOLS_FILE);
        artifact(&path, io::write_jsonl(&path, &rows))?;
        info!(instances = rows.len(), "pools built");
        Ok(rows)
    }

    pub fn pools(&self) -> Result<BTreeMap<String, Vec<String>>, PipelineError> {
        let path = self.out(POOLS_FILE);
        let rows: Vec<PoolRow> = if path.exists() { artifact(&path, io::read_jsonl(&path))? } else { self.build_pools()? };
        Ok(rows.into_iter().map(|r| (r.instance_id, r.pool)).collect())
    }

    /// Embeds every pooled record once and writes `vectors.bin`.
    pub fn index(&self) -> Result<VectorStore, PipelineError> {
        let mut corpus = self.corpus()?;
        attach_pools(&mut corpus, &self.pools()?);
        let roles = self.roles(&corpus)?;
        let mut texts: BTreeMap<&str, &str> = BTreeMap::new();
        for inst in &corpus.instances {
            for r in inst.pool_records() {
                texts.insert(&r.record_id, &r.text);
            }
        }
        let entries: Vec<(&str, &str)> = texts.into_iter().collect();
        let batches: Result<Vec<Vec<Vec<f32>>>, GatewayError> = self.install(|| {
            entries
                .par_chunks(EMBED_BATCH)
                .map(|chunk| roles.embedder.embed(&chunk.iter().map(|(_, t)| t.to_string()).collect::<Vec<_>>()))
                .collect()
        });
        let vectors: Vec<Vec<f32>> = batches?.into_iter().flatten().collect();
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        let mut store = VectorStore::new(dim);
        for ((id, _), v) in entries.iter().zip(&vectors) {
            store.insert(id, v)?;
        }
        store.save(&self.out(VECTORS_FILE))?;
        info!(records = store.len(), dim, "record index written");
        Ok(store)
    }

    pub fn vectors(&self) -> Result<VectorStore, PipelineError> {
        let path = self.out(VECTORS_FILE);
        if path.exists() {
            return Ok(VectorStore::load(&path)?);
        }
        self.index()
    }

    /// Corpus with pools, splits, role gateways and record vectors, building
    /// whichever of them is missing.
    pub fn state(&self) -> Result<State, PipelineError> {
        let mut corpus = self.corpus()?;
        let splits = self.splits()?;
        attach_pools(&mut corpus, &self.pools()?);
        let vectors = self.vectors()?;
        let roles = self.roles(&corpus)?;
        Ok(State { corpus, splits, roles, vectors })
    }

    pub(crate) fn retriever(&self, inst: &PersuasionInstance, vectors: &VectorStore) -> Result<Retriever, PipelineError> {
        let r = &self.cfg.retrieval;
        Ok(Retriever::new(&inst.instance_id, inst.pool_records(), r.k1, r.b)?.with_vectors(vectors)?)
    }

    pub fn utility(&self) -> Result<BTreeMap<String, UtilityTable>, PipelineError> {
        let path = self.out(UTILITY_FILE);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let rows: Vec<UtilityTable> = artifact(&path, io::read_jsonl(&path))?;
        Ok(rows.into_iter().map(|t| (t.instance_id.clone(), t)).collect())
    }

    /// Scores every pooled record of the instances in `splits` and merges the
    /// tables into `utility.jsonl`.
    pub fn score_records(&self, splits: &[Split]) -> Result<Vec<UtilityTable>, PipelineError> {
        let state = self.state()?;
        let instances = state.instances(splits);
        let params = self.cfg.utility;
        let seed = self.cfg.seed;
        let tables: Result<Vec<UtilityTable>, PipelineError> = self.install(|| {
            instances
                .par_iter()
                .map(|inst| {
                    let pool = inst.pool_ids();
                    crate::utility::score_records(
                        &state.roles.predictor,
                        &state.roles.profiler,
                        &self.prompts,
                        inst,
                        &pool,
                        params,
                        seed,
                    )
                    .map_err(|e| PipelineError::Instance { instance: inst.instance_id.clone(), message: e.to_string() })
                })
                .collect()
        });
        let tables = tables?;
        let mut merged = self.utility()?;
        for t in &tables {
            merged.insert(t.instance_id.clone(), t.clone());
        }
        let path = self.out(UTILITY_FILE);
        artifact(&path, io::write_jsonl(&path, merged.values()))?;
        info!(instances = tables.len(), total = merged.len(), "record utilities written");
        Ok(tables)
    }
}

fn attach_pools(corpus: &mut Corpus, pools: &BTreeMap<String, Vec<String>>) {
    let mut missing = BTreeSet::new();
    for inst in &mut corpus.instances {
        match pools.get(&inst.instance_id) {
            Some(p) => inst.pool = Some(p.clone()),
            None => {
                missing.insert(inst.instance_id.clone());
            }
        }
    }
    if !missing.is_empty() {
        warn!(count = missing.len(), "instances without a pool fall back to their full history");
    }
}
