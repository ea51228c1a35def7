//! Unit-norm vector store with cosine scoring and a small binary format.
//!
//! `vectors.bin` layout, all integers little-endian u32:
//! `dimension`, `count`, then per entry `id_len`, `id` (UTF-8), and
//! `dimension` little-endian f32 components.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::RetrievalError;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: BTreeMap<String, usize>,
}

pub(crate) fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (f64::from(*x) / norm) as f32).collect())
}

impl VectorStore {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, ids: Vec::new(), vectors: Vec::new(), index: BTreeMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Inserts (or replaces) a vector, normalizing it to unit length.
    pub fn insert(&mut self, id: &str, vector: &[f32]) -> Result<(), RetrievalError> {
        if vector.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: vector.len() });
        }
        let unit = normalize(vector).ok_or_else(|| RetrievalError::ZeroVector(id.to_string()))?;
        match self.index.get(id) {
            Some(&i) => self.vectors[i] = unit,
            None => {
                self.index.insert(id.to_string(), self.ids.len());
                self.ids.push(id.to_string());
                self.vectors.push(unit);
            }
        }
        Ok(())
    }

    fn insert_unit(&mut self, id: String, v: Vec<f32>) -> Result<(), RetrievalError> {
        let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(RetrievalError::Format(format!("vector for {id} has norm {norm}")));
        }
        if self.index.contains_key(&id) {
            return Err(RetrievalError::Format(format!("duplicate id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    /// A store restricted to `ids`, in that order. Missing ids are skipped.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> VectorStore {
        let mut out = VectorStore::new(self.dimension);
        for id in ids {
            if let Some(v) = self.get(id) {
                out.index.insert(id.to_string(), out.ids.len());
                out.ids.push(id.to_string());
                out.vectors.push(v.to_vec());
            }
        }
        out
    }

    /// Cosine similarity of every stored vector with `query`.
    pub fn score(&self, query: &[f32]) -> Result<BTreeMap<String, f64>, RetrievalError> {
        if self.is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: query.len() });
        }
        // The query stays in f64; only stored vectors are rounded to f32.
        let norm = query.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(self.ids.iter().map(|id| (id.clone(), 0.0)).collect());
        }
        let q: Vec<f64> = query.iter().map(|x| f64::from(*x) / norm).collect();
        Ok(self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| {
                let dot: f64 = v.iter().zip(&q).map(|(a, b)| f64::from(*a) * b).sum();
                (id.clone(), dot.clamp(-1.0, 1.0))
            })
            .collect())
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, RetrievalError> {
        let dimension = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut store = VectorStore::new(dimension);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|e| RetrievalError::Format(e.to_string()))?;
            let mut v = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                v.push(f32::from_le_bytes(b));
            }
            store.insert_unit(id, v)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(RetrievalError::Format("trailing bytes after last entry".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::pipeline::io::write_atomic(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
