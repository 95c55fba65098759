//! Named random substreams derived from a single master seed.
//!
//! Every stochastic component draws from `substream(master, tag, index)`.
//! The stream seed is `mix(mix(master ^ fnv1a(tag)) ^ index)` where `mix` is
//! the splitmix64 finalizer, so episode `k` of a batch always sees the same
//! generator regardless of how many threads collected the batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_SOURCE_TRAINING: &str = "source-training";
pub const STREAM_ROLLOUTS: &str = "rollouts";
pub const STREAM_POTENTIALS: &str = "potentials";
pub const STREAM_DEMOS: &str = "demos";

fn fnv1a(tag: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in tag.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    mix(mix(master ^ fnv1a(tag)) ^ index)
}

pub fn substream(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, tag, index))
}
