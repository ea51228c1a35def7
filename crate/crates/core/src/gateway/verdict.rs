//! View-change prediction: prompt selection and strict yes/no parsing.

use serde::{Deserialize, Serialize};

use super::prompts::{format_passages, PromptKind, PromptSet};
use super::{ChatParams, Gateway, GatewayError};
use crate::seed::{self, Key};
use crate::text::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewChange {
    ViewChanged,
    Unchanged,
}

impl ViewChange {
    pub fn as_label(self) -> u8 {
        match self {
            ViewChange::ViewChanged => 1,
            ViewChange::Unchanged => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: ViewChange,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_score: Option<f64>,
}

/// What the predictor is told about the persuadee.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionContext {
    Profile(String),
    History(Vec<String>),
    None,
}

/// Source of continuous scores for AUC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringMode {
    pub enabled: bool,
    /// Independent samples for the frequency estimator when the backend does
    /// not report token likelihoods. One sample yields a {0, 1} score.
    pub n_samples: usize,
    pub temperature: f64,
}

impl Default for ScoringMode {
    fn default() -> Self {
        Self { enabled: false, n_samples: 1, temperature: 0.7 }
    }
}

/// Lowercases, strips punctuation and reads the first word.
pub fn parse_verdict(raw: &str) -> Result<ViewChange, GatewayError> {
    let first = raw
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .find(|w| !w.is_empty());
    match first.as_deref() {
        Some("yes") => Ok(ViewChange::ViewChanged),
        Some("no") => Ok(ViewChange::Unchanged),
        _ => Err(GatewayError::UnparseableVerdict(raw.to_string())),
    }
}

const VERDICT_MAX_TOKENS: u32 = 16;

impl Gateway {
    pub fn predict_view_change(
        &self,
        prompts: &PromptSet,
        post: &str,
        comment: &str,
        context: &PredictionContext,
        scoring: ScoringMode,
    ) -> Result<Verdict, GatewayError> {
        if post.trim().is_empty() || comment.trim().is_empty() {
            return Err(GatewayError::InvalidParams("post and comment must be non-empty".into()));
        }
        let prompt = match context {
            PredictionContext::Profile(profile) => {
                prompts.render(PromptKind::PredictProfile, &[("user_profile", profile), ("post", post), ("comment", comment)])
            }
            PredictionContext::History(records) => prompts.render(
                PromptKind::PredictHistory,
                &[("user_profile", &format_passages(records)), ("post", post), ("comment", comment)],
            ),
            PredictionContext::None => prompts.render(PromptKind::PredictNone, &[("post", post), ("comment", comment)]),
        };
        let params = ChatParams::new(prompt, 0.0, VERDICT_MAX_TOKENS, None);
        let completion = self.complete(&params, scoring.enabled)?;
        let value = parse_verdict(&completion.text)?;

        let yes_score = match completion.yes_prob {
            Some(p) => Some(p),
            None if scoring.enabled => Some(self.sampled_yes_fraction(&params, value, scoring)?),
            None => None,
        };
        Ok(Verdict { value, raw_text: completion.text, yes_score })
    }

    fn sampled_yes_fraction(&self, params: &ChatParams, first: ViewChange, scoring: ScoringMode) -> Result<f64, GatewayError> {
        let mut yes = u32::from(first == ViewChange::ViewChanged);
        let mut parsed = 1u32;
        let prompt_hash = fnv1a(format!("{}\u{1f}{}", params.system, params.user).as_bytes());
        for i in 1..scoring.n_samples.max(1) {
            let sample = ChatParams {
                temperature: scoring.temperature,
                seed: Some(seed::api_seed(prompt_hash, &[Key::Str("score-sample"), Key::Int(i as u64)])),
                ..params.clone()
            };
            let text = self.chat(&sample)?;
            if let Ok(v) = parse_verdict(&text) {
                parsed += 1;
                yes += u32::from(v == ViewChange::ViewChanged);
            }
        }
        Ok(f64::from(yes) / f64::from(parsed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{mock_key, BackendConfig, BackendKind, MockBackend};
    use std::sync::Arc;

    #[test]
    fn parsing_rules() {
        assert_eq!(parse_verdict("yes").unwrap(), ViewChange::ViewChanged);
        assert_eq!(parse_verdict("No.").unwrap(), ViewChange::Unchanged);
        assert_eq!(parse_verdict("  **YES** because").unwrap(), ViewChange::ViewChanged);
        assert_eq!(parse_verdict("- no").unwrap(), ViewChange::Unchanged);
        assert!(matches!(parse_verdict("maybe so"), Err(GatewayError::UnparseableVerdict(_))));
        assert!(parse_verdict("").is_err());
        assert!(parse_verdict("yesterday").is_err());
    }

    fn gateway_answering(responses: &[(PredictionContext, &str)], prompts: &PromptSet) -> Gateway {
        let mut mock = MockBackend::default();
        for (ctx, answer) in responses {
            let prompt = match ctx {
                PredictionContext::Profile(p) => {
                    prompts.render(PromptKind::PredictProfile, &[("user_profile", p), ("post", "P"), ("comment", "C")])
                }
                PredictionContext::History(h) => prompts.render(
                    PromptKind::PredictHistory,
                    &[("user_profile", &format_passages(h)), ("post", "P"), ("comment", "C")],
                ),
                PredictionContext::None => prompts.render(PromptKind::PredictNone, &[("post", "P"), ("comment", "C")]),
            };
            mock.script(&ChatParams::new(prompt, 0.0, VERDICT_MAX_TOKENS, None), answer);
        }
        Gateway::new(BackendConfig::new(BackendKind::Mock, "m"), Arc::new(mock)).unwrap()
    }

    #[test]
    fn template_selected_by_context_variant() {
        let prompts = PromptSet::default();
        let ctxs = [
            (PredictionContext::Profile("• values data".into()), "yes"),
            (PredictionContext::History(vec!["old record".into()]), "No."),
            (PredictionContext::None, "no"),
        ];
        let gw = gateway_answering(&ctxs, &prompts);
        let off = ScoringMode::default();
        let v = gw.predict_view_change(&prompts, "P", "C", &ctxs[0].0, off).unwrap();
        assert_eq!(v.value, ViewChange::ViewChanged);
        assert_eq!(v.yes_score, None);
        let v = gw.predict_view_change(&prompts, "P", "C", &ctxs[1].0, off).unwrap();
        assert_eq!((v.value, v.raw_text.as_str()), (ViewChange::Unchanged, "No."));
        assert_eq!(gw.predict_view_change(&prompts, "P", "C", &ctxs[2].0, off).unwrap().value, ViewChange::Unchanged);
        assert!(gw.predict_view_change(&prompts, "", "C", &ctxs[2].0, off).is_err());
    }

    #[test]
    fn unparseable_response_is_an_error() {
        let prompts = PromptSet::default();
        let gw = gateway_answering(&[(PredictionContext::None, "maybe so")], &prompts);
        let r = gw.predict_view_change(&prompts, "P", "C", &PredictionContext::None, ScoringMode::default());
        assert!(matches!(r, Err(GatewayError::UnparseableVerdict(_))));
    }

    #[test]
    fn single_sample_score_is_degenerate() {
        let prompts = PromptSet::default();
        let gw = gateway_answering(&[(PredictionContext::None, "Yes")], &prompts);
        let scoring = ScoringMode { enabled: true, n_samples: 1, temperature: 0.7 };
        let v = gw.predict_view_change(&prompts, "P", "C", &PredictionContext::None, scoring).unwrap();
        assert_eq!(v.yes_score, Some(1.0));
    }

    #[test]
    fn sampled_score_is_yes_fraction() {
        let prompts = PromptSet::default();
        let prompt = prompts.render(PromptKind::PredictNone, &[("post", "P"), ("comment", "C")]);
        let base = ChatParams::new(prompt, 0.0, VERDICT_MAX_TOKENS, None);
        let mut mock = MockBackend::default();
        mock.script(&base, "no");
        let h = fnv1a(format!("{}\u{1f}{}", base.system, base.user).as_bytes());
        for (i, ans) in [(1u64, "yes"), (2, "yes"), (3, "unsure")] {
            let p = ChatParams { temperature: 0.7, seed: Some(seed::api_seed(h, &[Key::Str("score-sample"), Key::Int(i)])), ..base.clone() };
            assert_ne!(mock_key(&p), mock_key(&base));
            mock.script(&p, ans);
        }
        let gw = Gateway::new(BackendConfig::new(BackendKind::Mock, "m"), Arc::new(mock)).unwrap();
        let scoring = ScoringMode { enabled: true, n_samples: 4, temperature: 0.7 };
        let v = gw.predict_view_change(&prompts, "P", "C", &PredictionContext::None, scoring).unwrap();
        assert_eq!(v.value, ViewChange::Unchanged);
        // no, yes, yes parsed; "unsure" skipped
        assert!((v.yes_score.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }
}
