//! Deterministic RNG streams.
//!
//! Every source of randomness in a run is derived from the single run seed
//! through `stream(seed, purpose, a, b)`. The purpose tag plus two free
//! indices (typically epoch and batch, or a split tag) are mixed with
//! splitmix64, so streams are independent of evaluation order and of any
//! worker-thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Shuffle,
    Attack,
    Direction,
    Data,
    Eval,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x01,
            Purpose::Shuffle => 0x02,
            Purpose::Attack => 0x03,
            Purpose::Direction => 0x04,
            Purpose::Data => 0x05,
            Purpose::Eval => 0x06,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds two indices into a seed, for handing a derived seed to a
/// component that does its own stream splitting.
pub fn combine(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b.wrapping_add(0x5bd1e995)))
}

/// Derives an independent ChaCha stream from the run seed.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = splitmix64(seed ^ splitmix64(purpose.tag()));
    s = splitmix64(s ^ splitmix64(a));
    s = splitmix64(s ^ splitmix64(b.wrapping_add(0xa5a5a5a5)));
    ChaCha8Rng::seed_from_u64(s)
}
