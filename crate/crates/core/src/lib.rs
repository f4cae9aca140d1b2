//! Differentially private synthesis of categorical data with the Perturbed
//! Gibbs Sampler (PeGS), its block variant with reset (PeGS.rs), and a
//! perturbed multiple-imputation baseline.
//!
//! The pipeline has three stages:
//!
//! 1. [`blocks::disintegrate`] turns a [`data::Dataset`] into per-feature
//!    hash-keyed count tables.
//! 2. [`privacy`] picks the Dirichlet perturbation `alpha` for a requested
//!    privacy level.
//! 3. [`sampler::synthesize`] transforms seed records feature by feature,
//!    drawing from the perturbed conditionals.
//!
//! [`evaluation`] compares synthetic and original data and simulates
//! attribute-inference attacks.

// NaN must fail validation, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod hashing;
pub mod pmi;
pub mod privacy;
pub mod rng;
pub mod sampler;

pub use blocks::{conditional, disintegrate, load_blocks, save_blocks, BuildingBlocks, CountRow};
pub use data::{Category, Dataset, FeatureSpec, Schema};
pub use error::{PegsError, Result};
pub use privacy::{alpha_for_block, alpha_for_epsilon, alpha_for_ldiversity, PrivacyCriterion, PrivacySpec};
pub use sampler::{pegs_rs_block, pegs_sample, synthesize, SeedPool};
