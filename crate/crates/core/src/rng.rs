//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes an explicit generator. Child streams are
//! derived from a parent seed and a label path, so parallel tasks never share
//! a generator and a whole run replays from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the child stream reached from `seed` along `path`.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(child_seed(seed, path))
}

/// Draws a fresh 64-bit seed from `rng`, for handing to a child task.
pub fn fork_seed(rng: &mut Rng) -> u64 {
    rand::Rng::random(rng)
}
