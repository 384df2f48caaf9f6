//! Deterministic seed derivation.
//!
//! Every source of randomness in the laboratory flows from one root seed
//! through a named derivation path, e.g. root → "attack" → arm → pair_id.
//! Parallel and serial execution therefore draw identical streams, and any
//! single adversarial example can be replayed from its recorded path.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A derivation path: a root seed plus an ordered list of labels.
#[derive(Debug, Clone)]
pub struct SeedPath {
    root: u64,
    labels: Vec<String>,
}

impl SeedPath {
    pub fn root(root: u64) -> Self {
        Self { root, labels: Vec::new() }
    }

    /// Extend the path with one label (string or integer).
    pub fn child(&self, label: impl ToString) -> Self {
        let mut labels = self.labels.clone();
        labels.push(label.to_string());
        Self { root: self.root, labels }
    }

    /// Human-readable form recorded in attack outcomes for replay.
    pub fn describe(&self) -> String {
        let mut s = format!("root:{}", self.root);
        for l in &self.labels {
            s.push('/');
            s.push_str(l);
        }
        s
    }

    /// 32-byte seed for this path. Uses SHA-256 over a canonical encoding,
    /// so the stream is stable across platforms and releases.
    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.root.to_le_bytes());
        for l in &self.labels {
            hasher.update((l.len() as u64).to_le_bytes());
            hasher.update(l.as_bytes());
        }
        hasher.finalize().into()
    }

    /// Compact u64 form, for config fields that carry a single seed.
    pub fn seed_u64(&self) -> u64 {
        let bytes = self.seed_bytes();
        u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes"))
    }

    /// Instantiate the stream for this path.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}
