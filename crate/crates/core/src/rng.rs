//! Seed handling.
//!
//! A run has one root seed. Each consumer derives its own stream with
//! [`derive_seed`], which mixes the parent seed with a stream tag through
//! SplitMix64: `child = splitmix64(parent ^ splitmix64(fnv1a(tag)))`.
//! Tags are fixed strings ("init/encoder", "shuffle/pretrain", ...) optionally
//! followed by an integer index, so no module ever reads ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(tag)))
}

pub fn derive_indexed(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(parent, tag) ^ splitmix64(index))
}

pub fn rng_for(parent: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(parent, tag))
}
