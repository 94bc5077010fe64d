//! Counter-based seed derivation.
//!
//! Every random stream in a run is addressed by a path of integers below a
//! master seed (`master → sweep point → sequence → shot`). A child seed only
//! depends on its parent and index, so streams can be generated in any order
//! and on any number of threads with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self(splitmix64(master))
    }

    pub fn child(self, index: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
