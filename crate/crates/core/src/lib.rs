//! Monte Carlo engine for Brownian bridges whose legs interact through a
//! radial pair potential, together with the superharmonic potential family
//! and the estimators that test endpoint-ratio inequalities.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bridges;
pub mod cli;
pub mod energy;
pub mod estimators;
pub mod model;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod symmetrize;

pub use energy::{EnergyTerms, ExternalWorld};
pub use estimators::RunConfig;
pub use model::{ModelParams, Path};
pub use potentials::RadialPotential;
pub use stats::Estimate;
