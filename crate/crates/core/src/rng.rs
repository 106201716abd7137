//! Deterministic random streams.
//!
//! Every stream is keyed by a master seed, a purpose label and a short list
//! of integer coordinates (run index, day, user id, ...). Keys are hashed
//! with SplitMix64 into a ChaCha8 seed, so the numbers a component sees do
//! not depend on the order in which other components consumed theirs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes `(master, label, coords)` into a single 64-bit key.
pub fn derive_key(master: u64, label: &str, coords: &[u64]) -> u64 {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    state ^= fnv1a(label);
    acc ^= splitmix64(&mut state);
    for &c in coords {
        state ^= c.wrapping_mul(GOLDEN).rotate_left(17);
        acc = acc.rotate_left(23) ^ splitmix64(&mut state);
    }
    acc
}

/// Builds the stream for `(master, label, coords)`.
pub fn stream(master: u64, label: &str, coords: &[u64]) -> Stream {
    let mut state = derive_key(master, label, coords);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
