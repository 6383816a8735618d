//! Stable, platform-independent hashing used for seeding and mock embeddings.
//! `std`'s `DefaultHasher` is not guaranteed stable across releases, so the
//! deterministic paths use these instead.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_continue(FNV_OFFSET, bytes)
}

fn fnv1a64_continue(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Hashes a seed together with a sequence of string parts. Parts are
/// length-delimited so `("ab", "c")` and `("a", "bc")` differ.
pub fn seeded_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut hash = fnv1a64_continue(FNV_OFFSET, &seed.to_le_bytes());
    for part in parts {
        hash = fnv1a64_continue(hash, &(part.len() as u64).to_le_bytes());
        hash = fnv1a64_continue(hash, part.as_bytes());
    }
    splitmix64(hash)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Maps a hash onto `[0, 1)` using its top 53 bits.
pub fn unit_interval(hash: u64) -> f64 {
    (hash >> 11) as f64 / (1u64 << 53) as f64
}
