//! Seeded, platform-independent random streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream; advances `parent` by one draw.
pub fn fork(parent: &mut Rng) -> Rng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}

/// Stream `index` of a family rooted at `seed`, without touching shared state.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}
