//! Okapi BM25 over whitespace/punctuation tokenized records.

use std::collections::{BTreeMap, HashMap};

use super::RetrievalError;
use crate::text::tokenize;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone)]
struct Doc {
    id: String,
    len: usize,
}

/// In-memory inverted index. Built deterministically from the records it
/// covers and never persisted.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    k1: f64,
    b: f64,
    docs: Vec<Doc>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    avgdl: f64,
}

impl LexicalIndex {
    pub fn build<'a, I>(records: I, k1: f64, b: f64) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut docs = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (idx, (id, text)) in records.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx, count));
            }
            docs.push(Doc { id: id.to_string(), len: tokens.len() });
        }
        if docs.is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        let total: usize = docs.iter().map(|d| d.len).sum();
        let avgdl = total as f64 / docs.len() as f64;
        Ok(Self { k1, b, docs, postings, avgdl })
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_len(&self, id: &str) -> Option<usize> {
        self.docs.iter().find(|d| d.id == id).map(|d| d.len)
    }

    pub fn vocabulary(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.postings.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Non-negative IDF: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every indexed record against `query`. Each distinct
    /// query term contributes once; records sharing no term score exactly 0.
    pub fn score(&self, query: &str) -> BTreeMap<String, f64> {
        let mut scores = vec![0.0f64; self.docs.len()];
        let mut terms = tokenize(query);
        terms.sort_unstable();
        terms.dedup();
        // avgdl is 0 only when every record is token-free, in which case no
        // posting exists and the loop below never runs.
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - self.b + self.b * self.docs[doc].len as f64 / self.avgdl;
                scores[doc] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
            }
        }
        self.docs.iter().zip(scores).map(|(d, s)| (d.id.clone(), s)).collect()
    }
}
