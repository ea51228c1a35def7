//! Prompt templates for every model role.
//!
//! The default templates ship as text assets. Slots are written `{name}` and
//! substituted in a single pass, so slot values that themselves contain
//! `{post}`-like text are never expanded a second time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    PredictProfile,
    PredictHistory,
    PredictNone,
    Profiler,
    QueryStage1,
    QueryStage2,
    Hyde,
    QueryInference,
}

impl PromptKind {
    pub const ALL: [PromptKind; 8] = [
        PromptKind::PredictProfile,
        PromptKind::PredictHistory,
        PromptKind::PredictNone,
        PromptKind::Profiler,
        PromptKind::QueryStage1,
        PromptKind::QueryStage2,
        PromptKind::Hyde,
        PromptKind::QueryInference,
    ];

    /// File stem of the bundled asset.
    pub fn stem(self) -> &'static str {
        match self {
            PromptKind::PredictProfile => "predict_profile",
            PromptKind::PredictHistory => "predict_history",
            PromptKind::PredictNone => "predict_none",
            PromptKind::Profiler => "profiler",
            PromptKind::QueryStage1 => "query_stage1",
            PromptKind::QueryStage2 => "query_stage2",
            PromptKind::Hyde => "hyde",
            PromptKind::QueryInference => "query_inference",
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            PromptKind::PredictProfile | PromptKind::PredictHistory => &["user_profile", "post", "comment"],
            PromptKind::PredictNone => &["post", "comment"],
            PromptKind::Profiler => &["post", "passages"],
            PromptKind::QueryStage2 => &["post", "question"],
            PromptKind::QueryStage1 | PromptKind::Hyde | PromptKind::QueryInference => &["post"],
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stem())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub system: String,
    pub user: String,
}

/// A filled-in prompt ready to send.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

macro_rules! asset {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/prompts/", $name))
    };
}

fn bundled(kind: PromptKind) -> (&'static str, &'static str) {
    match kind {
        PromptKind::PredictProfile => (asset!("predict_profile.system.txt"), asset!("predict_profile.user.txt")),
        PromptKind::PredictHistory => (asset!("predict_history.system.txt"), asset!("predict_history.user.txt")),
        PromptKind::PredictNone => (asset!("predict_none.system.txt"), asset!("predict_none.user.txt")),
        PromptKind::Profiler => (asset!("profiler.system.txt"), asset!("profiler.user.txt")),
        PromptKind::QueryStage1 => (asset!("query_stage1.system.txt"), asset!("query_stage1.user.txt")),
        PromptKind::QueryStage2 => (asset!("query_stage2.system.txt"), asset!("query_stage2.user.txt")),
        PromptKind::Hyde => (asset!("hyde.system.txt"), asset!("hyde.user.txt")),
        PromptKind::QueryInference => (asset!("query_inference.system.txt"), asset!("query_inference.user.txt")),
    }
}

/// Asset files end with a newline; the templates themselves do not.
fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|&k| {
                let (system, user) = bundled(k);
                (k, Template { system: strip_final_newline(system), user: strip_final_newline(user) })
            })
            .collect();
        Self { templates }
    }
}

impl PromptSet {
    pub fn template(&self, kind: PromptKind) -> &Template {
        &self.templates[&kind]
    }

    pub fn set(&mut self, kind: PromptKind, template: Template) {
        self.templates.insert(kind, template);
    }

    /// Replaces templates with `<stem>.system.txt` / `<stem>.user.txt` files
    /// found in `dir`; kinds without files keep their current template.
    pub fn load_overrides(&mut self, dir: &Path) -> std::io::Result<usize> {
        let mut replaced = 0;
        for kind in PromptKind::ALL {
            let sys = dir.join(format!("{}.system.txt", kind.stem()));
            let usr = dir.join(format!("{}.user.txt", kind.stem()));
            if sys.exists() || usr.exists() {
                let current = self.template(kind).clone();
                let system = if sys.exists() { strip_final_newline(&std::fs::read_to_string(sys)?) } else { current.system };
                let user = if usr.exists() { strip_final_newline(&std::fs::read_to_string(usr)?) } else { current.user };
                self.set(kind, Template { system, user });
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    pub fn render(&self, kind: PromptKind, slots: &[(&str, &str)]) -> RenderedPrompt {
        let t = self.template(kind);
        RenderedPrompt { system: render_template(&t.system, slots), user: render_template(&t.user, slots) }
    }

    /// Identifies which template produced a system prompt.
    pub fn kind_of_system(&self, system: &str) -> Option<PromptKind> {
        self.templates.iter().find(|(_, t)| t.system == system).map(|(k, _)| *k)
    }
}

/// Substitutes `{name}` slots in one left-to-right pass. Braces that do not
/// enclose a known slot name are copied through unchanged.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|s| s.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let replaced = close.and_then(|c| {
            let name = &after[..c];
            slots.iter().find(|(k, _)| *k == name).map(|(_, v)| (c, *v))
        });
        match replaced {
            Some((c, value)) => {
                out.push_str(value);
                rest = &after[c + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Inverse of [`render_template`] for templates whose slots are separated by
/// literal text: recovers each slot value from a rendered string. Values are
/// matched left to right, so a value containing the following literal is cut
/// short; the final literal is matched at the end of the string.
pub fn extract_slots(template: &str, rendered: &str, names: &[&str]) -> Option<BTreeMap<String, String>> {
    // split the template into alternating literal / slot pieces
    let mut pieces: Vec<(bool, &str)> = Vec::new();
    let mut literal_start = 0usize;
    let mut pos = 0usize;
    while let Some(open) = template[pos..].find('{').map(|o| o + pos) {
        let after = &template[open + 1..];
        let slot = after.find('}').map(|c| &after[..c]).filter(|n| names.contains(n));
        match slot {
            Some(name) => {
                pieces.push((false, &template[literal_start..open]));
                pieces.push((true, name));
                pos = open + name.len() + 2;
                literal_start = pos;
            }
            None => pos = open + 1,
        }
    }
    pieces.push((false, &template[literal_start..]));

    let mut out = BTreeMap::new();
    let mut cursor = rendered;
    let mut i = 0;
    while i < pieces.len() {
        let (is_slot, text) = pieces[i];
        if !is_slot {
            cursor = cursor.strip_prefix(text)?;
            i += 1;
            continue;
        }
        let next_literal = pieces.get(i + 1).map(|p| p.1).unwrap_or("");
        let is_last = i + 2 >= pieces.len();
        let end = if is_last {
            cursor.len().checked_sub(next_literal.len()).filter(|&e| cursor.is_char_boundary(e) && cursor[e..] == *next_literal)?
        } else if next_literal.is_empty() {
            return None;
        } else {
            cursor.find(next_literal)?
        };
        out.insert(text.to_string(), cursor[..end].to_string());
        cursor = &cursor[end..];
        i += 1;
    }
    cursor.is_empty().then_some(out)
}

/// Numbers records `[1] …`, `[2] …` in order, separated by blank lines.
pub fn format_passages<S: AsRef<str>>(texts: &[S]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("[{}] {}", i + 1, t.as_ref().trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}
