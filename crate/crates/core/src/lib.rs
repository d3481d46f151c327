//! Bayesian decision-tree ensembles for relative survival analysis.
//!
//! The excess hazard of each subject is modelled as a piecewise-exponential
//! baseline multiplied by `exp(r(x))` (proportional hazards) or
//! `exp(r(x, b))` (non-proportional hazards, the time bin `b` entering the
//! trees as an ordinal pseudo-covariate). Inference is a Bayesian backfitting
//! Gibbs sampler with log-gamma leaf priors, so every tree update uses a
//! closed-form integrated likelihood.
//!
//! This crate is `no_std` and only needs `alloc`; file formats, the CLI and
//! the simulation-study driver live in the `relsurv` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod estimands;
pub mod forest;
pub mod linalg;
pub mod sampler;
pub mod special;
pub mod simgen;
pub mod stats;
pub mod summaries;

pub use data::{
    CovariateKind, CovariateSpec, Dataset, LifeTable, LifeTableKey, SubjectRecord, TimeGrid,
};
pub use error::{Error, Result};
pub use forest::{Forest, SplitRule, TreeNode, TreePrior};
pub use sampler::{Mode, PosteriorDraws, SamplerConfig};
