//! Keyed seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose seed
//! is derived from the master seed and a list of string/integer keys. No global
//! RNG is used anywhere, so two runs with the same master seed agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl<'a> From<&'a String> for Key<'a> {
    fn from(s: &'a String) -> Self {
        Key::Str(s.as_str())
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

/// Derives a 64-bit seed from `master` and an ordered key path.
pub fn derive(master: u64, keys: &[Key<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"vcprof-seed-v1");
    hasher.update(master.to_le_bytes());
    for key in keys {
        match key {
            Key::Str(s) => {
                hasher.update([0x01]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            Key::Int(v) => {
                hasher.update([0x02]);
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A seed small enough to travel through JSON APIs that store integers as
/// doubles or signed 32-bit values.
pub fn api_seed(master: u64, keys: &[Key<'_>]) -> u64 {
    derive(master, keys) & 0x7fff_ffff
}

/// Deterministic RNG for a derivation path.
pub fn rng(master: u64, keys: &[Key<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, keys))
}

/// Uniform value in [0, 1) from a derivation path, used by the oracle backend
/// for seeded but stateless choices.
pub fn unit(master: u64, keys: &[Key<'_>]) -> f64 {
    (derive(master, keys) >> 11) as f64 / (1u64 << 53) as f64
}
