//! Seeding: one root seed, one ChaCha stream per purpose.
//!
//! Child streams are addressed by a fixed counter, so the draws used for a
//! path simulation never depend on how many draws some other component made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
pub mod stream {
    pub const PATH: u64 = 1;
    pub const MC_SHOCKS: u64 = 2;
    pub const NO_ARBITRAGE: u64 = 3;
    pub const PILOT: u64 = 4;
    pub const HISTOGRAM: u64 = 5;
    pub const GAP_START: u64 = 6;
    pub const DECOMPOSITION_PATH: u64 = 7;
}

/// Root of a deterministic family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent generator for `purpose`.
    pub fn child(&self, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(purpose);
        rng
    }

    /// Generator for the `index`-th sub-task of `purpose` (e.g. one per worker).
    pub fn grandchild(&self, purpose: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(purpose);
        rng
    }
}
