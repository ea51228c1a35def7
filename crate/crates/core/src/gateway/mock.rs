//! Fixture-driven backend: every completion is looked up by a stable hash of
//! the request.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatParams, Completion, GatewayError, HashingEmbedder};

/// Fixture key: hex SHA-256 over system prompt, user prompt, temperature
/// (four decimals) and seed.
pub fn mock_key(params: &ChatParams) -> String {
    let mut h = Sha256::new();
    h.update(params.system.as_bytes());
    h.update([0x1f]);
    h.update(params.user.as_bytes());
    h.update([0x1f]);
    h.update(format!("{:.4}", params.temperature).as_bytes());
    h.update([0x1f]);
    match params.seed {
        Some(s) => h.update(s.to_string().as_bytes()),
        None => h.update(b"none"),
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of a `fixtures/*.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub key_hash: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_prob: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: HashMap<String, FixtureLine>,
    embedder: HashingEmbedder,
}

impl MockBackend {
    pub fn new(lines: impl IntoIterator<Item = FixtureLine>) -> Self {
        Self { fixtures: lines.into_iter().map(|l| (l.key_hash.clone(), l)).collect(), embedder: HashingEmbedder::default() }
    }

    /// Scripts `response` for exactly this request.
    pub fn script(&mut self, params: &ChatParams, response: &str) {
        let key = mock_key(params);
        self.fixtures.insert(key.clone(), FixtureLine { key_hash: key, response: response.to_string(), yes_prob: None });
    }

    /// Loads one `.jsonl` file, or every `.jsonl` file of a directory in name
    /// order (later files win on duplicate keys).
    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "jsonl") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut lines = Vec::new();
        for f in files {
            let src = fs::read_to_string(&f)?;
            for (i, line) in src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| {
                    GatewayError::InvalidConfig(format!("{}:{}: bad fixture line: {e}", f.display(), i + 1))
                })?;
                lines.push(parsed);
            }
        }
        Ok(Self::new(lines))
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Backend for MockBackend {
    fn complete(&self, _model: &str, params: &ChatParams, _logprobs: bool) -> Result<Completion, GatewayError> {
        let key = mock_key(params);
        let line = self.fixtures.get(&key).ok_or(GatewayError::FixtureMiss(key))?;
        Ok(Completion { text: line.response.clone(), yes_prob: line.yes_prob })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(self.embedder.embed_all(texts))
    }
}
