//! Counter-based seeding.
//!
//! Every replication owns three independent ChaCha8 streams (design,
//! responses, guess coins) keyed by a hash of `(master_seed, procedure,
//! replication)`. Results therefore do not depend on which worker runs a
//! replication or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream of covariates and assignment coins.
pub const DESIGN_STREAM: u64 = 0;
/// Stream of response errors.
pub const RESPONSE_STREAM: u64 = 1;
/// Stream of guess tie-break coins.
pub const GUESS_STREAM: u64 = 2;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a coordinate tuple.
pub fn derive_seed(master_seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix(master_seed), |h, &c| mix(h ^ mix(c)))
}

/// The generator for `stream` of the replication identified by `coords`.
pub fn stream_rng(master_seed: u64, coords: &[u64], stream: u64) -> ChaCha8Rng {
    let seed = derive_seed(master_seed, coords);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(seed.wrapping_add(i as u64)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
