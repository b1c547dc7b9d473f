//! Deterministic sub-seed derivation.
//!
//! Every stochastic choice in a run is drawn from an RNG seeded by
//! `derive(master, path)`, so a replication can be reproduced from its master
//! seed and the label path alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels for the independent random streams of one replication.
pub mod stream {
    pub const DEPLOY: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const RELAYS: u64 = 3;
    pub const ROUTES: u64 = 4;
    pub const CSMA: u64 = 5;
    pub const TRACKING: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a label path into a master seed.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &label| splitmix(acc ^ splitmix(label)))
}

pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
