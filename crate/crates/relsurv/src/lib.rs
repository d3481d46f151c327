//! File formats, simulation studies and the `relsurv` command-line tool
//! for Bayesian tree-ensemble relative-survival models.
//!
//! The models themselves live in [`relsurv_core`].

pub mod bundled;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod study;

pub use error::{AppError, AppResult};
pub use relsurv_core as core;
