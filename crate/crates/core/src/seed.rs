//! Seed derivation.
//!
//! A master seed expands into independent streams keyed by
//! `(community, seed value, arm, purpose)`. Graph and exposure streams omit
//! the arm so every arm of one seed shares them; only the signals differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Traits,
    Graph,
    Exposure,
    Calibration,
}

impl Purpose {
    fn label(self) -> &'static str {
        match self {
            Purpose::Traits => "traits",
            Purpose::Graph => "graph",
            Purpose::Exposure => "exposure",
            Purpose::Calibration => "calibration",
        }
    }
}

/// Hash an ordered list of labels into a 64-bit seed.
pub fn derive(master: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for one `(community, seed value, purpose)` stream shared by all arms.
pub fn stream_seed(master: u64, community: &str, seed: u64, purpose: Purpose) -> u64 {
    derive(master, &[community, &seed.to_string(), purpose.label()])
}

/// Next seed in a retry chain (used when a generated object must be redrawn).
pub fn next_attempt(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        derive(seed, &["attempt", &attempt.to_string()])
    }
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
