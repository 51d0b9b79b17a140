//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed and selected by a stream id, so distinct
//! `(seed, stream)` pairs never share a keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent random sources of one run.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const ORACLE: u64 = 4;
    /// Chains use `CHAIN_BASE + chain_index`.
    pub const CHAIN_BASE: u64 = 1 << 32;
}

/// Generator for `(seed, stream)`. The seed occupies the first eight key
/// bytes verbatim, so the map is injective.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Seed for sweep cell `index` under `base`. SplitMix64 finaliser over
/// `base + index`; bijective in `base + index` for a fixed base.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
