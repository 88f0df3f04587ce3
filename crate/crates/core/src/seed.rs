//! Derivation of independent random substreams.
//!
//! Every random choice in a decode is drawn from a generator seeded by
//! [`derive`] over the run seed and the coordinates of the choice (step,
//! path, candidate, ...). Work can therefore be scheduled on any number of
//! threads without changing a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_PROPOSE: u64 = 0x5354_4550;
pub(crate) const TAG_ROLLOUT: u64 = 0x524f_4c4c;
pub(crate) const TAG_SELECT: u64 = 0x5345_4c45;
pub(crate) const TAG_COMPLETE: u64 = 0x434f_4d50;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `coords` into `seed`. Order matters; `derive(s, &[a, b])` and
/// `derive(s, &[b, a])` are unrelated streams.
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
