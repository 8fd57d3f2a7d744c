//! Deterministic random streams keyed by simulation coordinates.
//!
//! Every draw the network model makes comes from a stream derived from the
//! global seed plus the coordinates of the thing being decided, so results do
//! not depend on which worker executes an event or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c908, |acc, w| mix64(acc ^ mix64(*w)))
}

pub fn stream(words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(words))
}

/// Stream for one photon on one hop of one session.
pub fn photon_stream(seed: u64, session: u32, hop: u16, photon: u64) -> ChaCha8Rng {
    stream(&[seed, u64::from(session), u64::from(hop), photon])
}
