//! Seed derivation.
//!
//! Every random decision in a run draws from its own ChaCha stream whose seed
//! is a SHA-256 digest of `(root, purpose, device, round)`. Streams therefore
//! do not depend on the order in which devices are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for child streams.
pub mod purpose {
    pub const TASK_MEANS: &str = "task-means";
    pub const TASK_TRAIN: &str = "task-train";
    pub const TASK_TEST: &str = "task-test";
    pub const PARTITION: &str = "partition";
    pub const DEVICE: &str = "device";
    pub const BUDGET: &str = "epoch-budget";
    pub const AUGMENT: &str = "augment";
    pub const SELECT: &str = "select";
    pub const TRAIN: &str = "local-train";
}

/// Derives a 64-bit child seed from a root seed and a labelled coordinate.
pub fn derive_seed(root: u64, purpose: &str, device: u64, round: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(device.to_le_bytes());
    hasher.update(round.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(root: u64, purpose: &str, device: u64, round: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, purpose, device, round))
}
