//! Synthetic persuadee backend.
//!
//! Each user of an [`OracleWorld`] owns a latent attribute set; each record
//! leaks some of those attributes; each comment targets attributes and carries
//! a label. The backend recognises the bundled prompts and answers them from
//! the world: profilers list leaked attributes, predictors say "yes" when a
//! label-1 comment targets an attribute the profile mentions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts::{extract_slots, PromptKind, PromptSet};
use super::{Backend, ChatParams, Completion, GatewayError, HashingEmbedder};
use crate::corpus::Corpus;
use crate::seed::{self, Key};
use crate::text::{fnv1a, salient_tokens, tokenize};

pub const EMPTY_PROFILE: &str = "• no persuasion-relevant traits identified";
const SALIENT_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleUser {
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    #[serde(default)]
    pub leaks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComment {
    #[serde(default)]
    pub targets: Vec<String>,
    pub label: u8,
}

/// Randomness applied only to sampled (temperature > 0) requests.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleSampling {
    /// Probability that a sampled profile omits each attribute.
    #[serde(default)]
    pub dropout: f64,
    /// Probability that a label-0 comment is answered "yes".
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleWorld {
    pub users: BTreeMap<String, OracleUser>,
    pub records: BTreeMap<String, OracleRecord>,
    pub comments: BTreeMap<String, OracleComment>,
    #[serde(default, skip_serializing_if = "is_default_sampling")]
    pub sampling: OracleSampling,
}

fn is_default_sampling(s: &OracleSampling) -> bool {
    *s == OracleSampling::default()
}

fn is_attribute_token(a: &str) -> bool {
    !a.is_empty() && a.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

impl OracleWorld {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let src = std::fs::read_to_string(path)?;
        let world: OracleWorld = serde_json::from_str(&src)
            .map_err(|e| GatewayError::InvalidWorld(format!("{}: {e}", path.display())))?;
        world.validate()?;
        Ok(world)
    }

    /// Every attribute owned by some user.
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.users.values().flat_map(|u| u.attributes.iter().map(String::as_str)).collect()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidWorld(m));
        for (id, u) in &self.users {
            if let Some(a) = u.attributes.iter().find(|a| !is_attribute_token(a)) {
                return bad(format!("user {id}: attribute {a:?} is not a single lowercase token"));
            }
        }
        let vocab = self.vocabulary();
        for (id, r) in &self.records {
            if let Some(a) = r.leaks.iter().find(|a| !vocab.contains(a.as_str())) {
                return bad(format!("record {id} leaks unknown attribute {a:?}"));
            }
        }
        for (id, c) in &self.comments {
            if c.label > 1 {
                return bad(format!("comment {id}: label must be 0 or 1"));
            }
            if let Some(a) = c.targets.iter().find(|a| !vocab.contains(a.as_str())) {
                return bad(format!("comment {id} targets unknown attribute {a:?}"));
            }
        }
        for (name, p) in [("dropout", self.sampling.dropout), ("noise", self.sampling.noise)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("sampling.{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Maps corpus texts back to the world's ids so prompts can be understood.
#[derive(Debug, Clone, Default)]
pub struct OracleHints {
    records: HashMap<String, String>,
    comments: HashMap<String, String>,
    posts: HashMap<String, String>,
}

impl OracleHints {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut h = Self::default();
        for inst in &corpus.instances {
            for r in &inst.full_history {
                h.records.entry(r.text.trim().to_string()).or_insert_with(|| r.record_id.clone());
            }
            for c in &inst.comments {
                h.comments.entry(c.text.trim().to_string()).or_insert_with(|| c.comment_id.clone());
            }
            h.posts.entry(inst.post_text.trim().to_string()).or_insert_with(|| inst.user_id.clone());
        }
        h
    }

    pub fn add_record(&mut self, text: &str, record_id: &str) {
        self.records.insert(text.trim().to_string(), record_id.to_string());
    }

    pub fn add_comment(&mut self, text: &str, comment_id: &str) {
        self.comments.insert(text.trim().to_string(), comment_id.to_string());
    }

    pub fn add_post(&mut self, text: &str, user_id: &str) {
        self.posts.insert(text.trim().to_string(), user_id.to_string());
    }
}

static PASSAGE_MARK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\[\d+\] ").expect("valid regex"));

#[derive(Debug, Clone)]
pub struct OracleBackend {
    world: OracleWorld,
    vocab: BTreeSet<String>,
    hints: OracleHints,
    prompts: PromptSet,
    embedder: HashingEmbedder,
}

impl OracleBackend {
    pub fn new(world: OracleWorld) -> Result<Self, GatewayError> {
        world.validate()?;
        let vocab = world.vocabulary().into_iter().map(str::to_string).collect();
        Ok(Self { world, vocab, hints: OracleHints::default(), prompts: PromptSet::default(), embedder: HashingEmbedder::default() })
    }

    pub fn with_hints(mut self, hints: OracleHints) -> Self {
        self.hints = hints;
        self
    }

    /// Prompts the oracle should recognise, when the defaults are overridden.
    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }

    fn mentioned(&self, text: &str) -> BTreeSet<String> {
        tokenize(text).into_iter().filter(|t| self.vocab.contains(t)).collect()
    }

    fn passage_leaks(&self, passage: &str) -> BTreeSet<String> {
        match self.hints.records.get(passage.trim()).and_then(|id| self.world.records.get(id)) {
            Some(r) => r.leaks.iter().cloned().collect(),
            None => self.mentioned(passage),
        }
    }

    fn passages_leaks(&self, passages: &str) -> BTreeSet<String> {
        PASSAGE_MARK
            .split(passages)
            .filter(|p| !p.trim().is_empty())
            .flat_map(|p| self.passage_leaks(p))
            .collect()
    }

    fn user_of_post(&self, post: &str) -> Option<&OracleUser> {
        self.hints.posts.get(post.trim()).and_then(|u| self.world.users.get(u))
    }

    fn profile(&self, passages: &str, params: &ChatParams, sample_seed: u64) -> String {
        let mut attrs = self.passages_leaks(passages);
        if params.temperature > 0.0 && self.world.sampling.dropout > 0.0 {
            attrs.retain(|a| seed::unit(sample_seed, &[Key::Str("dropout"), Key::Str(a)]) >= self.world.sampling.dropout);
        }
        if attrs.is_empty() {
            return EMPTY_PROFILE.to_string();
        }
        attrs.iter().map(|a| format!("• {a}")).collect::<Vec<_>>().join("\n")
    }

    fn verdict(&self, known: &BTreeSet<String>, comment: &str, sample_seed: u64, sampled: bool) -> &'static str {
        let (targets, label) = match self.hints.comments.get(comment.trim()).and_then(|id| self.world.comments.get(id)) {
            Some(c) => (c.targets.iter().cloned().collect::<BTreeSet<_>>(), c.label),
            None => (self.mentioned(comment), 1),
        };
        let yes = if label == 1 {
            !targets.is_disjoint(known)
        } else {
            sampled && seed::unit(sample_seed, &[Key::Str("noise")]) < self.world.sampling.noise
        };
        if yes {
            "yes"
        } else {
            "no"
        }
    }

    fn generated_sentence(&self, question: &str, post: &str, params: &ChatParams, sample_seed: u64) -> String {
        let mut tokens = salient_tokens(question, SALIENT_LIMIT);
        for t in salient_tokens(post, SALIENT_LIMIT) {
            if !tokens.contains(&t) {
                tokens.push(t);
            }
        }
        if params.temperature > 0.0 {
            let own: Vec<&String> = self.user_of_post(post).map(|u| u.attributes.iter().collect()).unwrap_or_default();
            let others: Vec<&String> = self.vocab.iter().filter(|a| !own.contains(a)).collect();
            let u = seed::unit(sample_seed, &[Key::Str("focus")]);
            let extra: Vec<&String> = if u < 0.5 && !own.is_empty() {
                own
            } else if !others.is_empty() {
                let i = (seed::unit(sample_seed, &[Key::Str("other")]) * others.len() as f64) as usize;
                vec![others[i.min(others.len() - 1)]]
            } else {
                Vec::new()
            };
            for a in extra {
                if !tokens.contains(a) {
                    tokens.push(a.clone());
                }
            }
        }
        format!("The user's stance depends on {}.", tokens.join(" "))
    }

    fn answer(&self, params: &ChatParams) -> Result<String, GatewayError> {
        let kind = self
            .prompts
            .kind_of_system(&params.system)
            .ok_or_else(|| GatewayError::Oracle("unrecognised system prompt".into()))?;
        let slots = extract_slots(&self.prompts.template(kind).user, &params.user, kind.slots())
            .ok_or_else(|| GatewayError::Oracle(format!("user prompt does not match the {kind} template")))?;
        let slot = |name: &str| slots.get(name).map(String::as_str).unwrap_or("");
        let sample_seed = params.seed.unwrap_or_else(|| fnv1a(params.user.as_bytes()));
        let sampled = params.temperature > 0.0;
        let text = match kind {
            PromptKind::Profiler => self.profile(slot("passages"), params, sample_seed),
            PromptKind::PredictProfile => {
                self.verdict(&self.mentioned(slot("user_profile")), slot("comment"), sample_seed, sampled).to_string()
            }
            PromptKind::PredictHistory => {
                self.verdict(&self.passages_leaks(slot("user_profile")), slot("comment"), sample_seed, sampled).to_string()
            }
            PromptKind::PredictNone => self.verdict(&BTreeSet::new(), slot("comment"), sample_seed, sampled).to_string(),
            PromptKind::Hyde => salient_tokens(slot("post"), SALIENT_LIMIT).join(" "),
            PromptKind::QueryStage1 => {
                format!("What does the user value about {}?", salient_tokens(slot("post"), SALIENT_LIMIT).join(" "))
            }
            PromptKind::QueryStage2 => self.generated_sentence(slot("question"), slot("post"), params, sample_seed),
            PromptKind::QueryInference => match self.user_of_post(slot("post")) {
                Some(u) => {
                    let attrs: BTreeSet<&String> = u.attributes.iter().collect();
                    format!("The user values {}.", attrs.into_iter().cloned().collect::<Vec<_>>().join(" "))
                }
                None => format!("The user values {}.", salient_tokens(slot("post"), SALIENT_LIMIT).join(" ")),
            },
        };
        Ok(text)
    }
}

impl Backend for OracleBackend {
    fn complete(&self, _model: &str, params: &ChatParams, _logprobs: bool) -> Result<Completion, GatewayError> {
        self.answer(params).map(Completion::text)
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(self.embedder.embed_all(texts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::prompts::format_passages;

    fn world() -> OracleWorld {
        serde_json::from_value(serde_json::json!({
            "users": {"u1": {"attributes": ["frugal", "veteran"]}, "u2": {"attributes": ["gardener"]}},
            "records": {"r1": {"leaks": ["frugal"]}, "r2": {"leaks": []}, "r3": {"leaks": ["veteran"]}},
            "comments": {
                "c1": {"targets": ["frugal"], "label": 1},
                "c2": {"targets": [], "label": 0},
                "c3": {"targets": ["gardener"], "label": 1}
            }
        }))
        .unwrap()
    }

    fn backend() -> OracleBackend {
        let mut hints = OracleHints::default();
        hints.add_record("I clip coupons every week.", "r1");
        hints.add_record("Went hiking yesterday.", "r2");
        hints.add_record("My years in the army shaped me.", "r3");
        hints.add_comment("Think of the savings!", "c1");
        hints.add_comment("You are simply wrong.", "c2");
        hints.add_comment("Plants need this policy.", "c3");
        hints.add_post("Public transit funding is wasteful.", "u1");
        OracleBackend::new(world()).unwrap().with_hints(hints)
    }

    fn ask(b: &OracleBackend, kind: PromptKind, slots: &[(&str, &str)], temperature: f64, seed: Option<u64>) -> String {
        let prompt = PromptSet::default().render(kind, slots);
        b.complete("m", &ChatParams::new(prompt, temperature, 64, seed), false).unwrap().text
    }

    const POST: &str = "Public transit funding is wasteful.";

    #[test]
    fn profiler_lists_sorted_leaks() {
        let b = backend();
        let passages = format_passages(&["My years in the army shaped me.", "Went hiking yesterday.", "I clip coupons every week."]);
        let out = ask(&b, PromptKind::Profiler, &[("post", POST), ("passages", &passages)], 0.0, None);
        assert_eq!(out, "• frugal\n• veteran");
        let none = format_passages(&["Went hiking yesterday."]);
        assert_eq!(ask(&b, PromptKind::Profiler, &[("post", POST), ("passages", &none)], 0.0, None), EMPTY_PROFILE);
    }

    #[test]
    fn predictor_rules() {
        let b = backend();
        let p = |profile: &str, comment: &str| {
            ask(&b, PromptKind::PredictProfile, &[("user_profile", profile), ("post", POST), ("comment", comment)], 0.0, None)
        };
        assert_eq!(p("• frugal", "Think of the savings!"), "yes");
        assert_eq!(p("• veteran", "Think of the savings!"), "no");
        assert_eq!(p(EMPTY_PROFILE, "Think of the savings!"), "no");
        assert_eq!(p("• frugal\n• veteran", "You are simply wrong."), "no");
        let none = ask(&b, PromptKind::PredictNone, &[("post", POST), ("comment", "Think of the savings!")], 0.0, None);
        assert_eq!(none, "no");
        let history = format_passages(&["I clip coupons every week."]);
        let h = ask(&b, PromptKind::PredictHistory, &[("user_profile", &history), ("post", POST), ("comment", "Think of the savings!")], 0.0, None);
        assert_eq!(h, "yes");
    }

    #[test]
    fn group_enumeration_with_single_leaking_record() {
        // records leak {frugal}, {}, {}: only groups containing r1 get the label-1 comment right
        let b = backend();
        let texts = ["I clip coupons every week.", "Went hiking yesterday.", "My years in the army shaped me."];
        let mut w = world();
        w.records.get_mut("r3").unwrap().leaks.clear();
        let b = OracleBackend::new(w).unwrap().with_hints(b.hints.clone());
        for mask in 1u32..8 {
            let group: Vec<&str> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| texts[i]).collect();
            let profile = ask(&b, PromptKind::Profiler, &[("post", POST), ("passages", &format_passages(&group))], 0.0, None);
            let v = ask(&b, PromptKind::PredictProfile, &[("user_profile", &profile), ("post", POST), ("comment", "Think of the savings!")], 0.0, None);
            assert_eq!(v == "yes", mask & 1 == 1, "mask {mask}");
        }
    }

    #[test]
    fn query_prompts() {
        let b = backend();
        let q = ask(&b, PromptKind::QueryStage1, &[("post", POST)], 0.0, None);
        assert_eq!(q, "What does the user value about public transit funding wasteful?");
        let s = ask(&b, PromptKind::QueryStage2, &[("post", POST), ("question", &q)], 0.0, None);
        for t in ["user", "value", "public", "transit", "funding", "wasteful"] {
            assert!(tokenize(&s).contains(&t.to_string()), "{s}");
        }
        assert_eq!(ask(&b, PromptKind::Hyde, &[("post", POST)], 0.0, None), "public transit funding wasteful");
        assert_eq!(ask(&b, PromptKind::QueryInference, &[("post", POST)], 0.0, None), "The user values frugal veteran.");
    }

    #[test]
    fn sampled_stage2_sometimes_names_own_attributes() {
        let b = backend();
        let mut own = 0;
        for s in 0..40 {
            let out = ask(&b, PromptKind::QueryStage2, &[("post", POST), ("question", "Why?")], 0.8, Some(s));
            assert_eq!(out, ask(&b, PromptKind::QueryStage2, &[("post", POST), ("question", "Why?")], 0.8, Some(s)));
            if out.contains("frugal") {
                own += 1;
                assert!(out.contains("veteran"));
            } else {
                assert!(out.contains("gardener"));
            }
        }
        assert!((10..=30).contains(&own), "{own}");
    }

    #[test]
    fn dropout_only_when_sampling() {
        let mut w = world();
        w.sampling.dropout = 0.5;
        let b = OracleBackend::new(w).unwrap().with_hints(backend().hints);
        let passages = format_passages(&["I clip coupons every week.", "My years in the army shaped me."]);
        let slots = [("post", POST), ("passages", passages.as_str())];
        assert_eq!(ask(&b, PromptKind::Profiler, &slots, 0.0, Some(3)), "• frugal\n• veteran");
        let outs: BTreeSet<String> = (0..20).map(|s| ask(&b, PromptKind::Profiler, &slots, 0.7, Some(s))).collect();
        assert!(outs.len() > 1);
    }

    #[test]
    fn invalid_worlds_rejected() {
        let mut w = world();
        w.records.get_mut("r2").unwrap().leaks.push("unknown".into());
        assert!(matches!(OracleBackend::new(w), Err(GatewayError::InvalidWorld(_))));
        let mut w = world();
        w.comments.get_mut("c1").unwrap().label = 2;
        assert!(w.validate().is_err());
        let mut w = world();
        w.users.get_mut("u1").unwrap().attributes.push("two words".into());
        assert!(w.validate().is_err());
        let mut w = world();
        w.sampling.dropout = 1.0;
        assert!(w.validate().is_err());
    }

    #[test]
    fn unrecognised_prompt_is_an_error() {
        let b = backend();
        let p = ChatParams { temperature: 0.0, max_tokens: 8, seed: None, system: "hello".into(), user: "x".into() };
        assert!(matches!(b.complete("m", &p, false), Err(GatewayError::Oracle(_))));
    }
}
