//! Seed derivation.
//!
//! Every random stream in the laboratory is keyed by a path of integers
//! hashed together with the master seed, so streams never depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of stream identifiers.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream tags used by the experiment harness.
pub mod stream {
    pub const CLIMATOLOGY: u64 = 1;
    pub const NOISE_SCALE: u64 = 2;
    pub const KAPPA: u64 = 3;
    pub const TEST_ARCHIVE: u64 = 4;
    pub const LAP: u64 = 5;
    pub const SAP: u64 = 6;
    pub const ENSEMBLE_SIZE: u64 = 7;
    pub const KAPPA_SWEEP: u64 = 8;
    pub const LYAPUNOV: u64 = 9;
    pub const MODEL_ERROR: u64 = 10;
    pub const SIMULATE: u64 = 11;

    pub const INITIAL_STATE: u64 = 100;
    pub const OBSERVATION: u64 = 101;
    pub const ENSEMBLE: u64 = 102;
}
