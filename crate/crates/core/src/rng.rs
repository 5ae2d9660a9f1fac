//! Seeding discipline.
//!
//! Every random stream in the crate is a ChaCha8 stream selected by
//! `(seed, stream index)`. ChaCha is counter based, so the draws of path `m`
//! or step `k` never depend on how many other streams were consumed or on
//! the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Child seed for `(master, component, index)`.
pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let label = fnv1a(component.as_bytes());
    mix64(mix64(master ^ label).wrapping_add(mix64(index.wrapping_add(label.rotate_left(17)))))
}

/// Independent stream `index` of the generator keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
