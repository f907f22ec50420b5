//! Evidential Dirichlet classification with calibrated uncertainty gating.
//!
//! A small multilayer perceptron produces per-class features which are mapped
//! through softplus into evidence, Dirichlet concentrations, subjective-logic
//! belief masses and a scalar uncertainty `u = K / S`. A threshold on `u`,
//! selected from validation predictions, separates confident predictions from
//! ones that should be referred for manual review, including inputs that lie
//! outside the training distribution.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command-line
//! interface and anything touching the filesystem live in the `evidra` crate.
//!
//! Module map:
//!
//! - [`numerics`]: softplus, log-gamma, digamma, trigamma, softmax, entropy
//! - [`matrix`]: the dense row-major matrix used for batches and weights
//! - [`backbone`]: MLP with hand-derived backpropagation
//! - [`head`]: evidence, Dirichlet parameters and subjective opinions
//! - [`losses`]: CE, evidential CE, KL regulariser, temperature CE, schedules
//! - [`trainer`]: Adam, the training loop and prediction
//! - [`calibration`]: threshold selection on validation uncertainty
//! - [`metrics`]: confusion matrices, F1, AUC, OOD detection rates
//! - [`baselines`]: entropy, MC-dropout, snapshot-ensemble and TTA scorers
//! - [`datagen`]: seeded Gaussian blobs, OOD sets and stratified splits

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;

pub mod backbone;
pub mod baselines;
pub mod calibration;
pub mod datagen;
pub mod head;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Seeded generator used everywhere randomness is needed.
///
/// ChaCha8 seeded through `SeedableRng::seed_from_u64`, so a `u64` seed
/// determines every stream bit-for-bit on any platform.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed, e.g. one per epoch or per pass.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the combined word
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
