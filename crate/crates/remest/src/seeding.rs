//! Deterministic seed derivation.
//!
//! Every randomized operation takes a master seed plus a stream label and
//! mixes them through a SplitMix64 finalizer. Runs and worker chunks get
//! seeds derived from their index, so results do not depend on scheduling
//! or thread count.

/// SplitMix64 finalizer; a fixed bijective permutation of u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a master seed and a stream label.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seed for Monte-Carlo run `run_index` under `master`.
pub fn run_seed(master: u64, run_index: u64) -> u64 {
    derive_seed(master, run_index)
}
