//! Query strategies and the per-instance retriever.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{hybrid_rank, order_scores, Fusion, LexicalIndex, Ranking, RetrievalError, VectorStore};
use crate::corpus::UserRecord;
use crate::gateway::{ChatParams, Gateway, PromptKind, PromptSet};
use crate::seed::{self, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryStrategy {
    Recent,
    Random { seed: u64 },
    LexicalPost,
    DensePost,
    Hyde,
    Generated,
}

impl QueryStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            QueryStrategy::Recent => "recent",
            QueryStrategy::Random { .. } => "random",
            QueryStrategy::LexicalPost => "lexical_post",
            QueryStrategy::DensePost => "dense_post",
            QueryStrategy::Hyde => "hyde",
            QueryStrategy::Generated => "generated",
        }
    }

    /// Parses a strategy name; `random` takes `seed`.
    pub fn parse(name: &str, seed: u64) -> Result<Self, RetrievalError> {
        Ok(match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "recent" => QueryStrategy::Recent,
            "random" => QueryStrategy::Random { seed },
            "bm25" | "lexical_post" | "lexical" => QueryStrategy::LexicalPost,
            "dense_post" | "dense" => QueryStrategy::DensePost,
            "hyde" => QueryStrategy::Hyde,
            "generated" | "ours" => QueryStrategy::Generated,
            _ => return Err(RetrievalError::UnknownStrategy(name.to_string())),
        })
    }
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryStrategy {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, 0)
    }
}

/// Asks the query generator for a hypothetical user record.
pub fn generate_hyde(gateway: &Gateway, prompts: &PromptSet, post: &str) -> Result<String, RetrievalError> {
    if post.trim().is_empty() {
        return Err(RetrievalError::EmptyInput);
    }
    let prompt = prompts.render(PromptKind::Hyde, &[("post", post)]);
    let params = ChatParams::new(prompt, 0.0, gateway.config().max_tokens, None);
    Ok(gateway.chat(&params)?.trim().to_string())
}

/// Search over one instance's record pool. The lexical index is built
/// eagerly; record vectors are embedded on first dense query unless supplied.
#[derive(Debug)]
pub struct Retriever {
    scope: String,
    texts: BTreeMap<String, String>,
    created_at: BTreeMap<String, i64>,
    lexical: LexicalIndex,
    vectors: OnceLock<VectorStore>,
}

impl Retriever {
    /// `scope` keys the random strategy so different instances draw
    /// different samples from the same seed.
    pub fn new<'a>(
        scope: &str,
        records: impl IntoIterator<Item = &'a UserRecord>,
        k1: f64,
        b: f64,
    ) -> Result<Self, RetrievalError> {
        let mut texts = BTreeMap::new();
        let mut created_at = BTreeMap::new();
        for r in records {
            texts.insert(r.record_id.clone(), r.text.clone());
            created_at.insert(r.record_id.clone(), r.created_at);
        }
        let lexical = LexicalIndex::build(texts.iter().map(|(id, t)| (id.as_str(), t.as_str())), k1, b)?;
        Ok(Self { scope: scope.to_string(), texts, created_at, lexical, vectors: OnceLock::new() })
    }

    /// Uses precomputed vectors; `store` must cover every pooled record.
    pub fn with_vectors(self, store: &VectorStore) -> Result<Self, RetrievalError> {
        let sub = store.subset(self.texts.keys().map(String::as_str));
        if sub.len() != self.texts.len() {
            return Err(RetrievalError::KeySetMismatch);
        }
        let _ = self.vectors.set(sub);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn created_at(&self) -> &BTreeMap<String, i64> {
        &self.created_at
    }

    pub fn vectors(&self, embedder: &Gateway) -> Result<&VectorStore, RetrievalError> {
        if let Some(v) = self.vectors.get() {
            return Ok(v);
        }
        let ids: Vec<&String> = self.texts.keys().collect();
        let texts: Vec<String> = self.texts.values().cloned().collect();
        let embedded = embedder.embed(&texts)?;
        let mut store = VectorStore::new(embedded[0].len());
        for (id, v) in ids.into_iter().zip(&embedded) {
            store.insert(id, v)?;
        }
        Ok(self.vectors.get_or_init(|| store))
    }

    pub fn lexical_scores(&self, query: &str) -> BTreeMap<String, f64> {
        self.lexical.score(query)
    }

    pub fn dense_scores(&self, query: &str, embedder: &Gateway) -> Result<BTreeMap<String, f64>, RetrievalError> {
        let store = self.vectors(embedder)?;
        let q = embedder.embed_one(query)?;
        store.score(&q)
    }

    /// Dense-only ranking of every pooled record.
    pub fn rank_dense(&self, query: &str, embedder: &Gateway) -> Result<Ranking, RetrievalError> {
        let scores = self.dense_scores(query, embedder)?;
        Ok(self.ranking(&scores, query, None))
    }

    /// Fused lexical + dense ranking of every pooled record.
    pub fn rank_hybrid(&self, query: &str, embedder: &Gateway, fusion: Fusion) -> Result<Ranking, RetrievalError> {
        let lex = self.lexical_scores(query);
        let dense = self.dense_scores(query, embedder)?;
        let mut r = hybrid_rank(&lex, &dense, fusion, &self.created_at)?;
        r.query_text = query.to_string();
        Ok(r)
    }

    fn ranking(&self, scores: &BTreeMap<String, f64>, query: &str, strategy: Option<QueryStrategy>) -> Ranking {
        Ranking { entries: order_scores(scores, &self.created_at), query_text: query.to_string(), strategy }
    }

    /// Top-`k` records under `strategy`. `embedder` serves dense scoring,
    /// `querygen` writes HyDE documents, `query_text` feeds the generated
    /// strategy.
    #[allow(clippy::too_many_arguments)]
    pub fn retrieve(
        &self,
        strategy: QueryStrategy,
        post: &str,
        k: usize,
        embedder: &Gateway,
        querygen: &Gateway,
        prompts: &PromptSet,
        query_text: Option<&str>,
    ) -> Result<Ranking, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::BadK);
        }
        let (scores, query) = match strategy {
            QueryStrategy::Recent => {
                (self.created_at.iter().map(|(id, t)| (id.clone(), *t as f64)).collect(), String::new())
            }
            QueryStrategy::Random { seed } => {
                let mut ids: Vec<&String> = self.texts.keys().collect();
                ids.shuffle(&mut seed::rng(seed, &[Key::Str("random-retrieval"), Key::Str(&self.scope)]));
                let n = ids.len();
                (ids.into_iter().enumerate().map(|(i, id)| (id.clone(), (n - i) as f64)).collect(), String::new())
            }
            QueryStrategy::LexicalPost => (self.lexical_scores(post), post.to_string()),
            QueryStrategy::DensePost => (self.dense_scores(post, embedder)?, post.to_string()),
            QueryStrategy::Hyde => {
                let doc = generate_hyde(querygen, prompts, post)?;
                (self.dense_scores(&doc, embedder)?, doc)
            }
            QueryStrategy::Generated => {
                let q = query_text.filter(|q| !q.trim().is_empty()).ok_or(RetrievalError::MissingQueryText)?;
                (self.dense_scores(q, embedder)?, q.to_string())
            }
        };
        Ok(self.ranking(&scores, &query, Some(strategy)).truncate(k))
    }
}
