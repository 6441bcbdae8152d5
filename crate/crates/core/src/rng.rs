//! Deterministic random substreams.
//!
//! Every chain owns a ChaCha stream keyed by a SHA-256 digest of its
//! coordinates, so results never depend on thread scheduling or on the order
//! in which methods are run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type ChainRng = ChaCha8Rng;

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"dinglab/v1");
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Seed for a named sub-experiment, e.g. one sampling method.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let d = digest(&[&master.to_le_bytes(), label.as_bytes()]);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Stream of chain `index` under `seed`.
pub fn chain_rng(seed: u64, index: u64) -> ChainRng {
    ChaCha8Rng::from_seed(digest(&[&seed.to_le_bytes(), b"chain", &index.to_le_bytes()]))
}

/// Stream for an auxiliary purpose (reference draws, oracle samples,
/// projection directions).
pub fn labeled_rng(seed: u64, label: &str) -> ChainRng {
    ChaCha8Rng::from_seed(digest(&[&seed.to_le_bytes(), label.as_bytes()]))
}
