//! Record-level persuasion utility.
//!
//! A pool is shuffled and cut into groups several times. Every group yields a
//! few sampled profiles, each profile is scored by how well the predictor does
//! on the instance's comments when given that profile, and a record's utility
//! is the mean score of the profiles built from groups that contained it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::{PersuasionInstance, UserRecord};
use crate::evalkit::{Confusion, F1Mode};
use crate::gateway::{Gateway, GatewayError, PredictionContext, PromptSet, ScoringMode};
use crate::generation::{generate_profile, GenerationError, ProfileRequest};
use crate::seed::{self, Key};

#[derive(Debug, thiserror::Error)]
pub enum UtilityError {
    #[error("instance {0} has no comments")]
    NoComments(String),
    #[error("pool is empty")]
    EmptyPool,
    #[error("record {0} is not in the instance history")]
    UnknownRecord(String),
    #[error("invalid utility parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub group_size: usize,
    pub repeats: usize,
    pub profiles_per_group: usize,
    pub temperature: f64,
    pub f1_mode: F1Mode,
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self { group_size: 5, repeats: 3, profiles_per_group: 3, temperature: 0.7, f1_mode: F1Mode::Macro }
    }
}

impl UtilityParams {
    pub fn validate(&self) -> Result<(), UtilityError> {
        if self.group_size == 0 || self.repeats == 0 || self.profiles_per_group == 0 {
            return Err(UtilityError::BadParams("group_size, repeats and profiles_per_group must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(UtilityError::BadParams(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileScore {
    pub profile_id: String,
    pub f1: f64,
    /// Comments with a parseable verdict.
    pub n_comments: usize,
    pub failures: usize,
    pub confusion: Confusion,
}

/// Predicts every comment of `instance` with `profile` as context.
pub fn score_profile(
    predictor: &Gateway,
    prompts: &PromptSet,
    profile_id: &str,
    profile_text: &str,
    instance: &PersuasionInstance,
    mode: F1Mode,
) -> Result<ProfileScore, UtilityError> {
    if instance.comments.is_empty() {
        return Err(UtilityError::NoComments(instance.instance_id.clone()));
    }
    let context = PredictionContext::Profile(profile_text.to_string());
    let verdicts: Vec<Result<Option<bool>, GatewayError>> = instance
        .comments
        .par_iter()
        .map(|c| {
            match predictor.predict_view_change(prompts, &instance.post_text, &c.text, &context, ScoringMode::default()) {
                Ok(v) => Ok(Some(v.value.as_label() == 1)),
                Err(GatewayError::UnparseableVerdict(raw)) => {
                    warn!(comment = %c.comment_id, raw = %raw, "unparseable verdict");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut confusion = Confusion::default();
    let mut failures = 0;
    for (c, v) in instance.comments.iter().zip(verdicts) {
        match v? {
            Some(pred) => confusion.add(pred, c.is_delta()),
            None => failures += 1,
        }
    }
    Ok(ProfileScore {
        profile_id: profile_id.to_string(),
        f1: confusion.f1(mode),
        n_comments: confusion.total() as usize,
        failures,
        confusion,
    })
}

/// `repeats` independent seeded shuffles of `pool`, each cut into groups of
/// `group_size` with a final short group kept as is.
pub fn partition_pool(pool: &[String], group_size: usize, repeats: usize, seed: u64, scope: &str) -> Vec<Vec<Vec<String>>> {
    (0..repeats)
        .map(|r| {
            let mut ids = pool.to_vec();
            ids.shuffle(&mut seed::rng(seed, &[Key::Str("partition"), Key::Str(scope), Key::Int(r as u64)]));
            ids.chunks(group_size.max(1)).map(<[String]>::to_vec).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordUtility {
    pub utility: f64,
    pub n_profiles: usize,
    pub profile_ids: Vec<String>,
}

/// One scored profile with the group it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileProvenance {
    pub profile_id: String,
    pub repeat: usize,
    pub group: usize,
    pub record_ids: Vec<String>,
    pub text: String,
    pub seed: u64,
    pub score: ProfileScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub instance_id: String,
    pub params: UtilityParams,
    pub records: BTreeMap<String, RecordUtility>,
    pub profiles: Vec<ProfileProvenance>,
}

impl UtilityTable {
    pub fn utilities(&self) -> BTreeMap<String, f64> {
        self.records.iter().map(|(id, r)| (id.clone(), r.utility)).collect()
    }

    /// Recomputes each record's utility from the stored profile scores.
    pub fn recompute(&self) -> BTreeMap<String, f64> {
        let by_id: BTreeMap<&str, f64> = self.profiles.iter().map(|p| (p.profile_id.as_str(), p.score.f1)).collect();
        self.records
            .iter()
            .map(|(id, r)| (id.clone(), mean(r.profile_ids.iter().map(|p| by_id[p.as_str()]))))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every record of `pool` for `instance`.
pub fn score_records(
    predictor: &Gateway,
    profiler: &Gateway,
    prompts: &PromptSet,
    instance: &PersuasionInstance,
    pool: &[String],
    params: UtilityParams,
    seed: u64,
) -> Result<UtilityTable, UtilityError> {
    params.validate()?;
    if pool.is_empty() {
        return Err(UtilityError::EmptyPool);
    }
    if instance.comments.is_empty() {
        return Err(UtilityError::NoComments(instance.instance_id.clone()));
    }
    let lookup: BTreeMap<&str, &UserRecord> = instance.full_history.iter().map(|r| (r.record_id.as_str(), r)).collect();
    if let Some(missing) = pool.iter().find(|id| !lookup.contains_key(id.as_str())) {
        return Err(UtilityError::UnknownRecord(missing.clone()));
    }
    let iid = instance.instance_id.as_str();
    let partitions = partition_pool(pool, params.group_size, params.repeats, seed, iid);
    let mut tasks = Vec::new();
    for (r, groups) in partitions.iter().enumerate() {
        for (g, group) in groups.iter().enumerate() {
            for j in 0..params.profiles_per_group {
                tasks.push((r, g, j, group));
            }
        }
    }
    let results: Vec<Result<Option<ProfileProvenance>, UtilityError>> = tasks
        .par_iter()
        .map(|&(r, g, j, group)| {
            let records: Vec<&UserRecord> = group.iter().map(|id| lookup[id.as_str()]).collect();
            let profile_seed =
                seed::api_seed(seed, &[Key::Str("utility"), Key::Str(iid), Key::Int(r as u64), Key::Int(g as u64), Key::Int(j as u64)]);
            let profile_id = format!("{iid}:u{r}.{g}.{j}");
            let req = ProfileRequest {
                profile_id: profile_id.clone(),
                instance_id: iid,
                post: &instance.post_text,
                records: &records,
                temperature: params.temperature,
                seed: Some(profile_seed),
                sample_index: j,
            };
            let profile = match generate_profile(profiler, prompts, &req) {
                Ok(p) => p,
                Err(e) => {
                    warn!(profile = %profile_id, error = %e, "profile generation failed; record loses one score");
                    return Ok(None);
                }
            };
            let score = score_profile(predictor, prompts, &profile_id, &profile.text, instance, params.f1_mode)?;
            Ok(Some(ProfileProvenance {
                profile_id,
                repeat: r,
                group: g,
                record_ids: group.clone(),
                text: profile.text,
                seed: profile_seed,
                score,
            }))
        })
        .collect();
    let mut profiles = Vec::new();
    for r in results {
        if let Some(p) = r? {
            profiles.push(p);
        }
    }

    let mut contributing: BTreeMap<&str, Vec<&ProfileProvenance>> = pool.iter().map(|id| (id.as_str(), Vec::new())).collect();
    for p in &profiles {
        for id in &p.record_ids {
            if let Some(v) = contributing.get_mut(id.as_str()) {
                v.push(p);
            }
        }
    }
    let records = contributing
        .into_iter()
        .map(|(id, ps)| {
            if ps.len() < params.repeats * params.profiles_per_group {
                warn!(record = id, n = ps.len(), "record has fewer profiles than planned");
            }
            let utility = mean(ps.iter().map(|p| p.score.f1));
            let profile_ids = ps.iter().map(|p| p.profile_id.clone()).collect();
            (id.to_string(), RecordUtility { utility, n_profiles: ps.len(), profile_ids })
        })
        .collect();
    Ok(UtilityTable { instance_id: iid.to_string(), params, records, profiles })
}
