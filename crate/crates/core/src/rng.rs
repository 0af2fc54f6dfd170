//! Per-stage random streams derived from the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent generator for `label`; the same seed and label always yield
/// the same stream regardless of what other stages consumed.
pub fn stage_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
