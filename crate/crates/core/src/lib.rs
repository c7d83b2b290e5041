//! Deep switch networks for binary data.
//!
//! A switch network models a distribution over `{0,1}^n` autoregressively:
//! each conditional `p(x_{k+1} | x_{1..k})` is an adaptive switch that picks,
//! per input, between several logistic separators. Two-layer networks stack
//! switches through binary intermediate variables that are marginalized out
//! exactly (or sampled with Metropolis–Hastings when there are many).
//!
//! Module map:
//!
//! - [`model`]: parameter containers, forward probabilities, sampling
//! - [`likelihood`]: per-conditional objective, exact gradients, finite-difference oracle
//! - [`mcmc`]: Metropolis–Hastings gradient estimator for two-layer conditionals
//! - [`trainer`] and [`checkpoint`]: SGD over all conditionals, model files
//! - [`data`]: synthetic distributions, MNIST ingestion, word codec, dataset files
//! - [`eval`]: exact model distributions, TV/JS, entropy, NLL, dictionary ratio
//! - [`diagnostics`]: finite-difference and MCMC gradient checks on random instances
//! - [`config`]: run configuration files and metrics logs
//! - [`pgm`]: graymap contact sheets of square binary samples

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod likelihood;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod pgm;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use likelihood::{Batch, GradientSet};
pub use model::{Architecture, ConditionalKind, ConditionalModel, IntermediateConfig, SwitchBlock, SwitchNetworkModel};
