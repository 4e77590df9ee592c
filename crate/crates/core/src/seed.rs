//! Hierarchical seed derivation.
//!
//! Every stochastic component takes a seed derived from the master seed and a
//! path of `(label, index)` pairs such as `[("stage", 3), ("rep", 1), ("fold", 4)]`.
//! Adding more replications never changes the seeds of earlier ones.

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Fold `master` with each `(label, index)` pair.
pub fn derive_seed(master: u64, labels: &[(&str, u64)]) -> u64 {
    labels.iter().fold(splitmix64(master), |h, &(label, index)| {
        splitmix64(splitmix64(h ^ fnv1a(label)) ^ index)
    })
}
