//! Counter-based random streams.
//!
//! Every draw in the simulator comes from a generator seeded by a
//! [`StreamKey`] built from `(seed, purpose, round, node, lane)`. Two draws
//! with different keys never share state, so the order in which policies or
//! nodes are evaluated cannot shift anyone else's randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Fleet = 1,
    Reading = 2,
    Trace = 3,
    Events = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    purpose: Purpose,
    round: u64,
    node: u64,
    lane: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            purpose,
            round: 0,
            node: 0,
            lane: 0,
        }
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = round as u64;
        self
    }

    pub fn node(mut self, node: u32) -> Self {
        self.node = node as u64;
        self
    }

    /// Free extra coordinate (zone, pollutant, ...).
    pub fn lane(mut self, lane: u64) -> Self {
        self.lane = lane;
        self
    }

    fn digest(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for part in [self.purpose as u64, self.round, self.node, self.lane] {
            h = splitmix64(h ^ part);
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.digest())
    }

    /// A single uniform draw in `[0, 1)`.
    pub fn uniform(&self) -> f64 {
        self.rng().random::<f64>()
    }
}
