pub mod classify;
pub mod dataset;
pub mod error;
pub mod optimizer;
pub mod qaoa;
pub mod qubo;
pub mod runner;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};

/// Deterministic child seed for stream `stream` of `base` (splitmix64 mix).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
