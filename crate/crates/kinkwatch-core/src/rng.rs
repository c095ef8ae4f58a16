//! Seed derivation for independent per-trial random streams.

/// Stream ids used by a trial.
pub const STREAM_DATA: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_VALIDATION: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(base, index, stream)` into a 64-bit seed. Chained SplitMix
/// finalizers, so nearby triples give unrelated seeds.
pub fn derive_seed(base: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ index) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
