//! Variance-aware networks for temporal interval localization.
//!
//! The crate propagates diagonal Gaussian moments through pooling, linear,
//! ReLU and L2-normalization layers, trains the resulting networks with a
//! KL-divergence regression loss, and evaluates them with mAP over temporal
//! IoU thresholds on a synthetic benchmark. [`verify`] holds independent
//! oracles (sampling, quadrature, finite differences) for every analytic
//! formula.

pub mod checkpoint;
pub mod config;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod layers;
pub mod losses;
pub mod moments;
pub mod network;
pub mod rng;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use moments::{GaussianScalar, MomentVector, WeightMatrix};
pub use network::{DetectionResult, Mode, Network, NetworkConfig, Variant};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/moments.md")]
    mod moments {}
    #[doc = include_str!("../../../book/src/relu.md")]
    mod relu {}
    #[doc = include_str!("../../../book/src/kl_loss.md")]
    mod kl_loss {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
