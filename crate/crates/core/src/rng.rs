//! Deterministic seeding helpers.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Fisher–Yates shuffle driven only by `next_u64`, so layouts stay stable
/// across `rand` releases.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        items.swap(i, j);
    }
}

/// Uniform index in `0..n` from one `next_u64` draw.
pub fn index(rng: &mut impl RngCore, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for the stream identified by `parts`.
pub fn stream(parts: &[u64]) -> Xoshiro256PlusPlus {
    let seed = parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3u64, |acc, &p| mix(acc ^ mix(p)));
    Xoshiro256PlusPlus::seed_from_u64(seed)
}
