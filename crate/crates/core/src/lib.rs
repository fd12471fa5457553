//! Multi-terminal approximate message passing (MAMP) for compressed sensing
//! of linearly correlated two-terminal sources.
//!
//! - [`source`]: Bernoulli-Gaussian mixing model, sampling, information dimension.
//! - [`estimator`]: closed-form MMSE denoiser, its Jacobian and channel MMSE.
//! - [`mamp`]: i.i.d. Gaussian ensembles and the two-terminal AMP recursion.
//! - [`se`]: state evolution, fixed points and rate-distortion sweeps.
//! - [`coupling`]: spatially coupled ensembles, block state evolution,
//!   block MAMP and phase-boundary search.

pub mod coupling;
pub mod error;
pub mod estimator;
pub mod mamp;
pub mod rng;
pub mod se;
pub mod source;

pub use error::{Error, Result};
pub use estimator::{McBudget, MmseEvaluator, NoiseModel};
pub use source::SourceSpec;
