//! Deterministic seed derivation.
//!
//! Every random stream in this crate is a ChaCha8 generator seeded through
//! `derive_seed`, so a single top-level seed fixes training, sampling and
//! RANSAC byte-for-byte. The mix is a splitmix64 finalizer over the base
//! seed and a stream index; replay tooling can reconstruct any stream from
//! the pair that produced it.

/// Derives an independent child seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_stream_sensitive() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }
}
