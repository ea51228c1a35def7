//! Profile generation and two-stage retrieval-query generation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::UserRecord;
use crate::gateway::prompts::format_passages;
use crate::gateway::{ChatParams, Gateway, GatewayError, PromptKind, PromptSet, RenderedPrompt};
use crate::seed::{self, Key};

pub const DEFAULT_CANDIDATES: usize = 16;
pub const PROFILE_TEMPERATURE: f64 = 0.7;
pub const QUERY_TEMPERATURE: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("post text is empty")]
    EmptyPost,
    #[error("profile generation needs at least one record")]
    NoRecords,
    #[error("sampling needs n >= 2, got {0}")]
    TooFewSamples(usize),
    #[error("model returned an empty profile")]
    EmptyProfile,
    #[error("model returned an empty query")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub profile_id: String,
    pub instance_id: String,
    pub record_ids: Vec<String>,
    pub text: String,
    pub temperature: f64,
    pub sample_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCandidate {
    pub candidate_id: String,
    pub instance_id: String,
    pub stage1_question: String,
    pub text: String,
    pub sample_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub is_question: bool,
}

/// Everything needed to request one profile.
#[derive(Debug, Clone)]
pub struct ProfileRequest<'a> {
    pub profile_id: String,
    pub instance_id: &'a str,
    pub post: &'a str,
    pub records: &'a [&'a UserRecord],
    pub temperature: f64,
    pub seed: Option<u64>,
    pub sample_index: usize,
}

pub fn profiler_prompt(prompts: &PromptSet, post: &str, records: &[&UserRecord]) -> RenderedPrompt {
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    prompts.render(PromptKind::Profiler, &[("post", post), ("passages", &format_passages(&texts))])
}

pub fn generate_profile(gateway: &Gateway, prompts: &PromptSet, req: &ProfileRequest<'_>) -> Result<Profile, GenerationError> {
    if req.post.trim().is_empty() {
        return Err(GenerationError::EmptyPost);
    }
    if req.records.is_empty() {
        return Err(GenerationError::NoRecords);
    }
    let prompt = profiler_prompt(prompts, req.post, req.records);
    let params = ChatParams::new(prompt, req.temperature, gateway.config().max_tokens, req.seed);
    let text = gateway.chat(&params)?.trim().to_string();
    if text.is_empty() {
        return Err(GenerationError::EmptyProfile);
    }
    Ok(Profile {
        profile_id: req.profile_id.clone(),
        instance_id: req.instance_id.to_string(),
        record_ids: req.records.iter().map(|r| r.record_id.clone()).collect(),
        text,
        temperature: req.temperature,
        sample_index: req.sample_index,
        seed: req.seed,
    })
}

/// Draws `n` profiles for one record group, each with its own derived seed.
/// Ids are `{id_prefix}:s{index}`.
#[allow(clippy::too_many_arguments)]
pub fn sample_profiles(
    gateway: &Gateway,
    prompts: &PromptSet,
    instance_id: &str,
    post: &str,
    group: &[&UserRecord],
    n: usize,
    temperature: f64,
    base_seed: u64,
    id_prefix: &str,
) -> Result<Vec<Profile>, GenerationError> {
    if n < 2 {
        return Err(GenerationError::TooFewSamples(n));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let req = ProfileRequest {
                profile_id: format!("{id_prefix}:s{i}"),
                instance_id,
                post,
                records: group,
                temperature,
                seed: Some(seed::api_seed(base_seed, &[Key::Str("profile-sample"), Key::Int(i as u64)])),
                sample_index: i,
            };
            generate_profile(gateway, prompts, &req)
        })
        .collect()
}

pub fn generate_stage1_question(gateway: &Gateway, prompts: &PromptSet, post: &str) -> Result<Question, GenerationError> {
    if post.trim().is_empty() {
        return Err(GenerationError::EmptyPost);
    }
    let prompt = prompts.render(PromptKind::QueryStage1, &[("post", post)]);
    let text = gateway.chat(&ChatParams::new(prompt, 0.0, gateway.config().max_tokens, None))?.trim().to_string();
    let is_question = text.ends_with('?');
    if !is_question {
        warn!(question = %text, "stage-1 output is not a question; keeping it");
    }
    Ok(Question { text, is_question })
}

#[allow(clippy::too_many_arguments)]
pub fn generate_stage2_queries(
    gateway: &Gateway,
    prompts: &PromptSet,
    instance_id: &str,
    post: &str,
    question: &str,
    n: usize,
    temperature: f64,
    base_seed: u64,
) -> Result<Vec<QueryCandidate>, GenerationError> {
    if question.trim().is_empty() {
        return Err(GenerationError::EmptyQuery);
    }
    if post.trim().is_empty() {
        return Err(GenerationError::EmptyPost);
    }
    let prompt = prompts.render(PromptKind::QueryStage2, &[("post", post), ("question", question)]);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = seed::api_seed(base_seed, &[Key::Str("query-sample"), Key::Int(i as u64)]);
            let params = ChatParams::new(prompt.clone(), temperature, gateway.config().max_tokens, Some(s));
            let text = gateway.chat(&params)?.trim().to_string();
            if text.is_empty() {
                return Err(GenerationError::EmptyQuery);
            }
            Ok(QueryCandidate {
                candidate_id: format!("{instance_id}:q{i}"),
                instance_id: instance_id.to_string(),
                stage1_question: question.to_string(),
                text,
                sample_index: i,
                seed: Some(s),
            })
        })
        .collect()
}

/// The retrieval query used at inference. A preference-trained generator
/// answers the single-step prompt at temperature 0; otherwise the first
/// stage-2 sample conditioned on the stage-1 question is used.
pub fn inference_query(gateway: &Gateway, prompts: &PromptSet, instance_id: &str, post: &str, base_seed: u64) -> Result<String, GenerationError> {
    if post.trim().is_empty() {
        return Err(GenerationError::EmptyPost);
    }
    if gateway.config().trained {
        let prompt = prompts.render(PromptKind::QueryInference, &[("post", post)]);
        let text = gateway.chat(&ChatParams::new(prompt, 0.0, gateway.config().max_tokens, None))?.trim().to_string();
        if text.is_empty() {
            return Err(GenerationError::EmptyQuery);
        }
        return Ok(text);
    }
    let question = generate_stage1_question(gateway, prompts, post)?;
    let first = generate_stage2_queries(gateway, prompts, instance_id, post, &question.text, 1, QUERY_TEMPERATURE, base_seed)?;
    Ok(first.into_iter().next().map(|c| c.text).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::record;
    use crate::gateway::{BackendConfig, BackendKind, MockBackend, OracleBackend, OracleHints, OracleWorld};
    use std::sync::Arc;

    fn oracle() -> Gateway {
        let world: OracleWorld = serde_json::from_value(serde_json::json!({
            "users": {"u": {"attributes": ["aone", "atwo", "athree"]}},
            "records": {"r1": {"leaks": ["atwo"]}, "r2": {"leaks": ["aone"]}, "r3": {"leaks": []}},
            "comments": {}
        }))
        .unwrap();
        let mut hints = OracleHints::default();
        hints.add_record("text one", "r1");
        hints.add_record("text two", "r2");
        hints.add_record("text three", "r3");
        hints.add_post("Rent control hurts renters", "u");
        let backend = OracleBackend::new(world).unwrap().with_hints(hints);
        Gateway::new(BackendConfig::new(BackendKind::Oracle, "oracle"), Arc::new(backend)).unwrap()
    }

    fn recs() -> Vec<UserRecord> {
        vec![record("r1", "u", "text one", 1), record("r2", "u", "text two", 2), record("r3", "u", "text three", 3)]
    }

    #[test]
    fn oracle_profile_lists_sorted_leaks() {
        let gw = oracle();
        let rs = recs();
        let group: Vec<&UserRecord> = rs.iter().collect();
        let req = ProfileRequest {
            profile_id: "p".into(),
            instance_id: "i",
            post: "Rent control hurts renters",
            records: &group,
            temperature: 0.0,
            seed: None,
            sample_index: 0,
        };
        let p = generate_profile(&gw, &PromptSet::default(), &req).unwrap();
        assert_eq!(p.text, "• aone\n• atwo");
        assert_eq!(p.record_ids, vec!["r1", "r2", "r3"]);
        let empty: Vec<&UserRecord> = Vec::new();
        let bad = ProfileRequest { records: &empty, ..req };
        assert!(matches!(generate_profile(&gw, &PromptSet::default(), &bad), Err(GenerationError::NoRecords)));
    }

    #[test]
    fn sampling_indices_and_seeds() {
        let prompts = PromptSet::default();
        let rs = recs();
        let group: Vec<&UserRecord> = rs.iter().collect();
        let prompt = profiler_prompt(&prompts, "post", &group);
        let mut mock = MockBackend::default();
        for i in 0..16u64 {
            let s = seed::api_seed(9, &[Key::Str("profile-sample"), Key::Int(i)]);
            mock.script(&ChatParams::new(prompt.clone(), 0.7, 512, Some(s)), &format!("• trait {i}"));
        }
        let gw = Gateway::new(BackendConfig::new(BackendKind::Mock, "m"), Arc::new(mock)).unwrap();
        let ps = sample_profiles(&gw, &prompts, "i", "post", &group, 16, 0.7, 9, "i:g0").unwrap();
        assert_eq!(ps.len(), 16);
        let texts: std::collections::BTreeSet<&str> = ps.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts.len(), 16);
        for (i, p) in ps.iter().enumerate() {
            assert_eq!(p.sample_index, i);
            assert_eq!(p.profile_id, format!("i:g0:s{i}"));
        }
        assert!(matches!(
            sample_profiles(&gw, &prompts, "i", "post", &group, 1, 0.7, 9, "x"),
            Err(GenerationError::TooFewSamples(1))
        ));
    }

    #[test]
    fn stage1_verbatim_and_flagged() {
        let prompts = PromptSet::default();
        let mut mock = MockBackend::default();
        let q = "What are the user's core values regarding government intervention in individual choice?";
        let p1 = prompts.render(PromptKind::QueryStage1, &[("post", "A")]);
        mock.script(&ChatParams::new(p1, 0.0, 512, None), q);
        let p2 = prompts.render(PromptKind::QueryStage1, &[("post", "B")]);
        mock.script(&ChatParams::new(p2, 0.0, 512, None), "Tell me more.");
        let gw = Gateway::new(BackendConfig::new(BackendKind::Mock, "m"), Arc::new(mock)).unwrap();
        let a = generate_stage1_question(&gw, &prompts, "A").unwrap();
        assert_eq!(a, Question { text: q.into(), is_question: true });
        assert!(!generate_stage1_question(&gw, &prompts, "B").unwrap().is_question);
    }

    #[test]
    fn oracle_queries() {
        let gw = oracle();
        let prompts = PromptSet::default();
        let post = "Rent control hurts renters";
        let q = generate_stage1_question(&gw, &prompts, post).unwrap();
        assert_eq!(q.text, "What does the user value about rent control hurts renters?");
        let cands = generate_stage2_queries(&gw, &prompts, "i", post, &q.text, 16, 0.8, 5).unwrap();
        assert_eq!(cands.len(), 16);
        for c in &cands {
            let toks = crate::text::tokenize(&c.text);
            for t in ["user", "value", "rent", "control", "hurts", "renters"] {
                assert!(toks.contains(&t.to_string()));
            }
        }
        assert_eq!(cands, generate_stage2_queries(&gw, &prompts, "i", post, &q.text, 16, 0.8, 5).unwrap());
        let fallback = inference_query(&gw, &prompts, "i", post, 5).unwrap();
        assert_eq!(fallback, cands[0].text);
    }

    #[test]
    fn trained_generator_answers_single_step() {
        let world: OracleWorld = serde_json::from_value(serde_json::json!({
            "users": {"u": {"attributes": ["zeta", "alpha"]}}, "records": {}, "comments": {}
        }))
        .unwrap();
        let mut hints = OracleHints::default();
        hints.add_post("Some post here", "u");
        let mut cfg = BackendConfig::new(BackendKind::Oracle, "qg");
        cfg.trained = true;
        let gw = Gateway::new(cfg, Arc::new(OracleBackend::new(world).unwrap().with_hints(hints))).unwrap();
        let q = inference_query(&gw, &PromptSet::default(), "i", "Some post here", 0).unwrap();
        assert_eq!(q, "The user values alpha zeta.");
    }
}
