//! Deterministic seed derivation.

/// One round of SplitMix64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Child seed for stream `stream` of `parent`; distinct streams of one parent
/// never collide in practice and the result depends on nothing else.
pub fn mix_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream))
}
