//! Deterministic feature-hashing embedder used by the mock and oracle
//! backends.

use crate::text::{fnv1a, tokenize};

pub const HASH_EMBED_DIM: usize = 64;

/// Bag of tokens hashed into `dim` signed buckets, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: HASH_EMBED_DIM }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f64; self.dim];
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            // token-free text still gets a fixed unit vector
            tokens.push(String::new());
        }
        for tok in &tokens {
            let h = fnv1a(tok.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every token cancelled out; fall back to the first bucket
            v[0] = 1.0;
            return v.into_iter().map(|x| x as f32).collect();
        }
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }

    pub fn embed_all(&self, texts: &[String]) -> Vec<Vec<f32>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn identical_texts_identical_vectors() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("the same text"), e.embed("the same text"));
        assert_eq!(e.embed("Same, TEXT"), e.embed("same text"));
    }

    #[test]
    fn unit_norm() {
        let e = HashingEmbedder::default();
        for t in ["a", "hello world", "", "!!!", "x y z x y z"] {
            let v = e.embed(t);
            assert_eq!(v.len(), 64);
            assert!((cos(&v, &v) - 1.0).abs() < 1e-6, "{t}");
        }
    }

    #[test]
    fn disjoint_texts_nearly_orthogonal() {
        let e = HashingEmbedder::default();
        let a = e.embed("cats enjoy warm sunny windowsills");
        let b = e.embed("quantum chromodynamics lattice simulations");
        assert!(cos(&a, &b).abs() <= 0.15, "{}", cos(&a, &b));
    }
}
