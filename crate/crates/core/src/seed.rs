/// Mixes a base seed with a list of coordinates (task index, repetition, ...)
/// into an independent 64-bit seed. Stable across platforms and releases.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &part in parts {
        acc = splitmix64(acc ^ splitmix64(part.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    acc
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
