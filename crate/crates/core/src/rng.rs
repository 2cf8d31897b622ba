//! Counter-style seed derivation.
//!
//! Every random quantity in the samplers is drawn from a ChaCha stream whose
//! key is a hash of the run seed and a fixed path of tags (iteration, time
//! step, member, purpose). Streams therefore do not depend on the order in
//! which work is scheduled, and parallel runs reproduce serial ones bit for
//! bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags; distinct values keep unrelated streams apart.
pub mod tag {
    pub const INIT: u64 = 0x01;
    pub const FORECAST: u64 = 0x02;
    pub const PSEUDO_OBS: u64 = 0x03;
    pub const SELECT: u64 = 0x04;
    pub const ENKS: u64 = 0x05;
    pub const STATIC: u64 = 0x06;
    pub const LATENT: u64 = 0x07;
    pub const VELOCITY: u64 = 0x08;
    pub const ITERATION: u64 = 0x09;
    pub const SIM_STATE: u64 = 0x0a;
    pub const SIM_OBS: u64 = 0x0b;
    pub const SIM_GAUGES: u64 = 0x0c;
    pub const FFBS: u64 = 0x0d;
    pub const FORECAST_DRAW: u64 = 0x0e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in the tree of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix64(seed ^ 0x5354_4f52_4d46_4c44),
        }
    }

    /// Child stream identified by `tag`.
    #[must_use]
    pub fn derive(self, tag: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    #[must_use]
    pub fn derive2(self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }

    pub fn key(self) -> u64 {
        self.key
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
