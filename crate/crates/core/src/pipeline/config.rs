//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evalkit::F1Mode;
use crate::gateway::{BackendConfig, ScoringMode};
use crate::preference::{QueryPrefConfig, QueryScoring, TrainingHyperparams};
use crate::retrieval::{Fusion, QueryStrategy, DEFAULT_B, DEFAULT_K1};
use crate::utility::UtilityParams;

fn d_seed() -> u64 {
    42
}
fn d_output() -> PathBuf {
    PathBuf::from("out")
}
fn d_min_history() -> usize {
    crate::corpus::DEFAULT_MIN_HISTORY
}
fn d_malformed() -> f64 {
    0.10
}
fn d_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}
fn d_pool_limit() -> usize {
    crate::corpus::DEFAULT_POOL_LIMIT
}
fn d_true() -> bool {
    true
}
fn d_k() -> usize {
    5
}
fn d_k1() -> f64 {
    DEFAULT_K1
}
fn d_b() -> f64 {
    DEFAULT_B
}
fn d_strategy() -> String {
    "generated".into()
}
fn d_random_runs() -> usize {
    10
}
fn d_failure_rate() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub threads: PathBuf,
    pub histories: PathBuf,
    #[serde(default = "d_min_history")]
    pub min_history: usize,
    #[serde(default = "d_malformed")]
    pub max_malformed_fraction: f64,
    #[serde(default = "d_ratios")]
    pub split_ratios: [f64; 3],
    /// Defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default = "d_pool_limit")]
    pub pool_limit: usize,
    /// Apply `pool_limit` to test instances too.
    #[serde(default = "d_true")]
    pub cap_test_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_k1")]
    pub k1: f64,
    #[serde(default = "d_b")]
    pub b: f64,
    #[serde(default)]
    pub fusion: Fusion,
    /// recent | random | bm25 | dense-post | hyde | generated
    #[serde(default = "d_strategy")]
    pub strategy: String,
    #[serde(default = "d_random_runs")]
    pub random_runs: usize,
    #[serde(default)]
    pub query_scoring: QueryScoring,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: d_k(),
            k1: d_k1(),
            b: d_b(),
            fusion: Fusion::default(),
            strategy: d_strategy(),
            random_runs: d_random_runs(),
            query_scoring: QueryScoring::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilerPrefConfig {
    pub k: usize,
    pub delta: f64,
    pub groups_per_instance: usize,
    pub group_size: usize,
    pub candidates: usize,
    pub temperature: f64,
}

impl Default for ProfilerPrefConfig {
    fn default() -> Self {
        Self { k: 4, delta: 0.05, groups_per_instance: 2, group_size: 5, candidates: 16, temperature: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryGenPrefConfig {
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub min_margin: f64,
    pub max_pairs_per_post: usize,
    pub candidates: usize,
    pub temperature: f64,
}

impl Default for QueryGenPrefConfig {
    fn default() -> Self {
        let t = QueryPrefConfig::default();
        Self {
            pos_threshold: t.pos_threshold,
            neg_threshold: t.neg_threshold,
            min_margin: t.min_margin,
            max_pairs_per_post: t.max_pairs_per_post,
            candidates: 16,
            temperature: 0.8,
        }
    }
}

impl QueryGenPrefConfig {
    pub fn thresholds(&self) -> QueryPrefConfig {
        QueryPrefConfig {
            pos_threshold: self.pos_threshold,
            neg_threshold: self.neg_threshold,
            min_margin: self.min_margin,
            max_pairs_per_post: self.max_pairs_per_post,
        }
    }
}

/// What the predictor sees about the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    Profile,
    History,
    None,
}

impl ContextKind {
    pub fn name(self) -> &'static str {
        match self {
            ContextKind::Profile => "profile",
            ContextKind::History => "history",
            ContextKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        match s {
            "profile" => Ok(ContextKind::Profile),
            "history" => Ok(ContextKind::History),
            "none" => Ok(ContextKind::None),
            other => Err(PipelineError::Config(format!("unknown context '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default)]
    pub context: ContextKind,
    #[serde(default)]
    pub f1_mode: F1Mode,
    #[serde(default)]
    pub scoring: ScoringMode,
    #[serde(default = "d_failure_rate")]
    pub max_failure_rate: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { context: ContextKind::default(), f1_mode: F1Mode::Positive, scoring: ScoringMode::default(), max_failure_rate: d_failure_rate() }
    }
}

/// Backends per model role; roles left out use `default`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiler: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub querygen: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<BackendConfig>,
}

impl BackendsConfig {
    pub fn role(&self, name: &str) -> Result<&BackendConfig, PipelineError> {
        let specific = match name {
            "predictor" => &self.predictor,
            "profiler" => &self.profiler,
            "querygen" => &self.querygen,
            "embedder" => &self.embedder,
            _ => &None,
        };
        specific
            .as_ref()
            .or(self.default.as_ref())
            .ok_or_else(|| PipelineError::Config(format!("no backend configured for role '{name}'")))
    }

    fn each_mut(&mut self) -> impl Iterator<Item = &mut BackendConfig> {
        [&mut self.default, &mut self.predictor, &mut self.profiler, &mut self.querygen, &mut self.embedder]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "TrainingHyperparams::profiler")]
    pub profiler: TrainingHyperparams,
    #[serde(default = "TrainingHyperparams::querygen")]
    pub querygen: TrainingHyperparams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { profiler: TrainingHyperparams::profiler(), querygen: TrainingHyperparams::querygen() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Worker threads for per-instance parallelism; all cores when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    /// Directory of `<kind>.system.txt` / `<kind>.user.txt` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub utility: UtilityParams,
    #[serde(default)]
    pub profiler_prefs: ProfilerPrefConfig,
    #[serde(default)]
    pub querygen_prefs: QueryGenPrefConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let src = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&src).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.threads);
        fix(&mut self.corpus.histories);
        if let Some(p) = self.prompts_dir.as_mut() {
            fix(p);
        }
        for b in self.backends.each_mut() {
            b.resolve_paths(base);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.retrieval.k == 0 {
            return bad("retrieval.k must be at least 1");
        }
        if self.corpus.pool_limit == 0 {
            return bad("corpus.pool_limit must be at least 1");
        }
        if self.retrieval.random_runs == 0 {
            return bad("retrieval.random_runs must be at least 1");
        }
        if self.profiler_prefs.candidates < 2 || self.querygen_prefs.candidates < 1 {
            return bad("preference candidate counts too small");
        }
        if self.profiler_prefs.group_size == 0 {
            return bad("profiler_prefs.group_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.inference.max_failure_rate) {
            return bad("inference.max_failure_rate must lie in [0, 1]");
        }
        self.strategy()?;
        self.utility.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.querygen_prefs.thresholds().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn strategy(&self) -> Result<QueryStrategy, PipelineError> {
        QueryStrategy::parse(&self.retrieval.strategy, self.seed).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn split_seed(&self) -> u64 {
        self.corpus.split_seed.unwrap_or(self.seed)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
