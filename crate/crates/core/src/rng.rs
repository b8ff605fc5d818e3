//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator seeded from `(seed, stream, block)`
//! through a SplitMix64 mixing chain, so replicas and time blocks can be
//! generated independently and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a list of indices into a 256-bit ChaCha key.
pub fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = splitmix(seed);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

/// Stream for replica `stream` of a run with master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(seed, &[stream]))
}

/// Stream for time block `block` of replica `stream`.
pub fn block_stream(seed: u64, stream: u64, block: i64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(seed, &[stream, block as u64, 0xB10C]))
}
