//! Seed derivation. Every random stream in a run is seeded from the single
//! root seed combined with a stable tag and an index:
//!
//! `derive(root, tag, index) = splitmix64(root ^ fnv1a64(tag) ^ splitmix64(index))`
//!
//! Tags in use: `lidar/<sensor id>` and `perception/<sensor id>` (index = frame),
//! plus the actor id for per-target detector noise.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a64(tag) ^ splitmix64(index))
}
