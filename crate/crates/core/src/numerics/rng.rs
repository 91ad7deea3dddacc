//! Seed handling shared by every module.
//!
//! There is no global RNG. A run owns one master seed; every independent
//! stream (a sample, a trial, a parameter tensor) derives its own seed via
//! [`derive_seed`] and builds a private [`ChaCha8Rng`] from it. Streams are
//! therefore insensitive to evaluation order, which is what makes CSV output
//! byte-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for stream `(tag, index)` under `master`.
///
/// The tag is folded in FNV-1a style byte by byte, then the whole triple is
/// run through splitmix64 twice. Distinct tags or indices give independent
/// streams for all practical purposes.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(mix(master ^ h).wrapping_add(index))
}

/// Deterministic RNG for one derived stream.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Convenience: RNG for stream `(tag, index)` under `master`.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_inputs_same_stream() {
        let a: Vec<f64> = (0..8).map(|_| stream(7, "x", 3).gen()).collect();
        let b: Vec<f64> = (0..8).map(|_| stream(7, "x", 3).gen()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn tags_and_indices_separate_streams() {
        assert_ne!(derive_seed(7, "patterns", 0), derive_seed(7, "patterns", 1));
        assert_ne!(derive_seed(7, "patterns", 0), derive_seed(7, "probe", 0));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(8, "a", 0));
    }
}
