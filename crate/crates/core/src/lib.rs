//! Dynamic shrinkage estimation of global minimum variance (GMV) portfolio
//! weights in high dimensions.
//!
//! At every rebalancing date the sample GMV portfolio is shrunk toward the
//! portfolio currently held. Two families are provided:
//!
//! * [`nonoverlap`]: each period's sample estimator uses only the newest block
//!   of returns;
//! * [`overlap`]: the estimation window extends, so each sample estimator
//!   reuses all earlier observations.
//!
//! [`rmt`] holds the deterministic-equivalent kernels behind both recursions
//! together with Monte Carlo checks, [`sim`] runs the simulation experiment and
//! [`backtest`] evaluates strategies on a return series.

pub mod backtest;
pub mod error;
pub mod exec;
pub mod io;
pub mod nonoverlap;
pub mod overlap;
pub mod rmt;
pub mod sim;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
pub use exec::Execution;
pub use stats::{
    CovarianceMatrix, LossEstimate, RelativeLoss, ReturnsBlock, SampleFit, WeightVector,
};
pub use strategy::Strategy;
