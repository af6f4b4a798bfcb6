//! Named, reproducible random sub-streams derived from one 64-bit seed.
//!
//! A stream is a ChaCha8 generator keyed by the master seed with its stream
//! id set from a hash of the name, so `simulate`, `init`, `restart-3` and
//! `sample-17` never overlap and do not depend on the order of creation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SnicaRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> SnicaRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name));
        rng
    }

    pub fn indexed(&self, name: &str, index: u64) -> SnicaRng {
        self.stream(&format!("{name}-{index}"))
    }

    /// A child tree whose streams are independent of this tree's.
    pub fn child(&self, name: &str) -> SeedTree {
        SeedTree {
            seed: self.seed ^ fnv1a(name).rotate_left(17),
        }
    }
}
