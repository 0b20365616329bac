//! WaveCorr: an asset-permutation-invariant convolutional portfolio policy
//! network, trained by backpropagating a trajectory Sharpe ratio through an
//! exact transaction-cost market model.
//!
//! Module map:
//! - [`tensor`], [`tape`], [`params`], [`rng`]: rank-3 tensors, reverse-mode
//!   autodiff, named parameter storage, deterministic randomness;
//! - [`blocks`]: the individual network blocks and asset permutations;
//! - [`policy`]: the assembled policy network, its multi-period (augmented)
//!   forward pass, the permutation witness, and checkpointing;
//! - [`env`]: portfolio evolution with exact transaction-cost netting;
//! - [`trainer`]: the Sharpe-ratio policy-gradient training loop;
//! - [`data`]: CSV ingestion, price relatives, splits, and the synthetic
//!   market generator;
//! - [`metrics`]: cost-exact backtesting and evaluation metrics;
//! - [`verify`]: runnable property suites for the library's structural
//!   guarantees.

#![allow(clippy::needless_range_loop)]

pub mod blocks;
pub mod data;
pub mod env;
pub mod error;
mod kernels;
pub mod metrics;
pub mod params;
pub mod policy;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use blocks::AssetPermutation;
pub use env::{CommissionRates, PortfolioWeights};
pub use error::{CoreError, Result};
pub use params::ParamStore;
pub use rng::{seed_rng, Rng};
pub use tensor::Tensor3;
