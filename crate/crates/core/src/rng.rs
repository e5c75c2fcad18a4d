//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] addressed by
//! `(seed, purpose, index)`. Per-agent draws use the agent's index as the
//! stream id, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinct purposes get distinct key material under the same run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Population = 1,
    Outcome = 2,
    Recommendation = 3,
    Restart = 4,
    Init = 5,
    Batches = 6,
    Augment = 7,
    Coefficients = 8,
    Deployment = 9,
    Test = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for `(seed, purpose, round)`; `round` separates e.g. RRM iterations.
pub fn derive_key(seed: u64, purpose: Purpose, round: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose as u64)) ^ splitmix64(round.wrapping_add(0x5851_F42D)))
}

/// Independent stream for one `(key, index)` pair.
pub fn stream(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

pub fn stream_for(seed: u64, purpose: Purpose, round: u64, index: u64) -> ChaCha8Rng {
    stream(derive_key(seed, purpose, round), index)
}
