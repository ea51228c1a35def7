//! Training-data construction: profiler preferences, record utility and
//! query-generator preferences, in that order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::{Pipeline, PipelineError, MANIFEST_FILE, PROFILER_PREFS_FILE, QUERYGEN_PREFS_FILE};
use crate::corpus::{PersuasionInstance, Split, UserRecord};
use crate::gateway::{PromptKind, Roles};
use crate::generation::{generate_stage1_question, generate_stage2_queries, profiler_prompt, sample_profiles, Profile};
use crate::preference::{
    build_profiler_pairs, build_query_pairs, export_dpo, score_query_candidate, write_manifest, KindManifest, PairKind,
    PreferencePair,
};
use crate::retrieval::VectorStore;
use crate::seed::{self, Key};
use crate::utility::{score_profile, ProfileScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub profiler: KindManifest,
    pub utility_instances: usize,
    pub querygen: KindManifest,
}

impl Pipeline {
    /// Profiler preference pairs over train instances.
    pub fn build_profiler_prefs(&self) -> Result<KindManifest, PipelineError> {
        let state = self.state()?;
        let instances = state.instances(&[Split::Train]);
        let per_instance: Result<Vec<Vec<PreferencePair>>, PipelineError> = self.install(|| {
            instances.par_iter().map(|inst| self.profiler_pairs_for(inst, &state.roles)).collect()
        });
        let pairs: Vec<PreferencePair> = per_instance?.into_iter().flatten().collect();
        let cfg = &self.config().profiler_prefs;
        let path = self.out(PROFILER_PREFS_FILE);
        let entry = export_dpo(
            &pairs,
            &path,
            PairKind::Profiler,
            serde_json::to_value(cfg).unwrap_or_default(),
            self.config().training.profiler.clone(),
        )?;
        write_manifest(&self.out(MANIFEST_FILE), PairKind::Profiler, entry.clone())?;
        info!(pairs = entry.count, instances = entry.instances, "profiler preferences exported");
        Ok(entry)
    }

    fn profiler_pairs_for(&self, inst: &PersuasionInstance, roles: &Roles) -> Result<Vec<PreferencePair>, PipelineError> {
        let cfg = self.config().profiler_prefs;
        let master = self.config().seed;
        let iid = inst.instance_id.as_str();
        let mut pool = inst.pool_records();
        pool.shuffle(&mut seed::rng(master, &[Key::Str("profiler-groups"), Key::Str(iid)]));
        let groups: Vec<&[&UserRecord]> = pool.chunks(cfg.group_size).take(cfg.groups_per_instance).collect();
        let wrap = |e: String| PipelineError::Instance { instance: iid.to_string(), message: e };
        let mut out = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            let base = seed::api_seed(master, &[Key::Str("profiler-pref"), Key::Str(iid), Key::Int(g as u64)]);
            let profiles = sample_profiles(
                &roles.profiler,
                self.prompts(),
                iid,
                &inst.post_text,
                group,
                cfg.candidates,
                cfg.temperature,
                base,
                &format!("{iid}:g{g}"),
            )
            .map_err(|e| wrap(e.to_string()))?;
            let scored: Result<Vec<(Profile, ProfileScore)>, PipelineError> = profiles
                .into_par_iter()
                .map(|p| {
                    let s = score_profile(&roles.predictor, self.prompts(), &p.profile_id, &p.text, inst, self.config().utility.f1_mode)
                        .map_err(|e| wrap(e.to_string()))?;
                    Ok((p, s))
                })
                .collect();
            let prompt = profiler_prompt(self.prompts(), &inst.post_text, group);
            out.extend(build_profiler_pairs(&scored?, cfg.k, cfg.delta, &prompt, &inst.post_text));
        }
        Ok(out)
    }

    /// Query-generator preference pairs over train instances, scored against
    /// the utilities in `utility.jsonl`.
    pub fn build_query_prefs(&self) -> Result<KindManifest, PipelineError> {
        let state = self.state()?;
        let instances = state.instances(&[Split::Train]);
        let utility = self.utility()?;
        let mut maps = BTreeMap::new();
        for inst in &instances {
            let table = utility.get(&inst.instance_id).ok_or_else(|| PipelineError::MissingUtility(inst.instance_id.clone()))?;
            maps.insert(inst.instance_id.as_str(), table.utilities());
        }
        let per_instance: Result<Vec<Vec<PreferencePair>>, PipelineError> = self.install(|| {
            instances
                .par_iter()
                .map(|inst| self.query_pairs_for(inst, &state.roles, &state.vectors, &maps[inst.instance_id.as_str()]))
                .collect()
        });
        let pairs: Vec<PreferencePair> = per_instance?.into_iter().flatten().collect();
        let q = &self.config().querygen_prefs;
        let mut config = serde_json::to_value(q).unwrap_or_default();
        config["k"] = self.config().retrieval.k.into();
        config["query_scoring"] = serde_json::to_value(self.config().retrieval.query_scoring).unwrap_or_default();
        let path = self.out(QUERYGEN_PREFS_FILE);
        let entry = export_dpo(&pairs, &path, PairKind::Querygen, config, self.config().training.querygen.clone())?;
        write_manifest(&self.out(MANIFEST_FILE), PairKind::Querygen, entry.clone())?;
        info!(pairs = entry.count, instances = entry.instances, "query-generator preferences exported");
        Ok(entry)
    }

    fn query_pairs_for(
        &self,
        inst: &PersuasionInstance,
        roles: &Roles,
        vectors: &VectorStore,
        utility: &BTreeMap<String, f64>,
    ) -> Result<Vec<PreferencePair>, PipelineError> {
        let cfg = self.config();
        let q = cfg.querygen_prefs;
        let iid = inst.instance_id.as_str();
        let wrap = |e: String| PipelineError::Instance { instance: iid.to_string(), message: e };
        let retriever = self.retriever(inst, vectors)?;
        let question = generate_stage1_question(&roles.querygen, self.prompts(), &inst.post_text).map_err(|e| wrap(e.to_string()))?;
        let base = seed::api_seed(cfg.seed, &[Key::Str("querygen-pref"), Key::Str(iid)]);
        let candidates = generate_stage2_queries(
            &roles.querygen,
            self.prompts(),
            iid,
            &inst.post_text,
            &question.text,
            q.candidates,
            q.temperature,
            base,
        )
        .map_err(|e| wrap(e.to_string()))?;
        let scored = candidates
            .into_iter()
            .map(|c| {
                let s = score_query_candidate(
                    &c.text,
                    &retriever,
                    &roles.embedder,
                    utility,
                    cfg.retrieval.k,
                    cfg.retrieval.query_scoring,
                    cfg.retrieval.fusion,
                )?;
                Ok((c, s))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let prompt = self.prompts().render(PromptKind::QueryInference, &[("post", &inst.post_text)]);
        Ok(build_query_pairs(&scored, &q.thresholds(), &prompt, &inst.post_text))
    }

    /// Profiler preferences, record utility and query preferences over the
    /// train split.
    pub fn build_training_data(&self) -> Result<TrainingSummary, PipelineError> {
        let profiler = self.build_profiler_prefs()?;
        let tables = self.score_records(&[Split::Train])?;
        let querygen = self.build_query_prefs()?;
        Ok(TrainingSummary { profiler, utility_instances: tables.len(), querygen })
    }
}
