//! Named random sub-streams derived from a single run seed.
//!
//! Every stochastic component (synthetic generation, encoder initialisation,
//! batch shuffling, forest bootstrap, split plans) draws from its own stream so
//! that re-seeding one component never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const SYNTH: &str = "synth";
pub const INIT_ACCESS: &str = "init.access";
pub const INIT_MORPH: &str = "init.morph";
pub const INIT_ECON: &str = "init.econ";
pub const SHUFFLE: &str = "shuffle";
pub const FOREST: &str = "forest";
pub const SPLITS: &str = "splits";

/// Derives a 64-bit seed for the named stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, name))
}

/// Sub-stream indexed by an integer (per-tree, per-repetition, per-epoch).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    stream(derive_seed(seed, name), &format!("{name}#{index}"))
}
