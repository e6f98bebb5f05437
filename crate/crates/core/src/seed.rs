//! Named, replayable random streams.
//!
//! Every stochastic decision draws from a ChaCha stream keyed by a base seed,
//! a purpose tag and an index (usually the training step). Resuming at step
//! `t` therefore needs no saved generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    let key = splitmix(splitmix(seed ^ tag_hash(tag)) ^ splitmix(index));
    ChaCha8Rng::seed_from_u64(key)
}
