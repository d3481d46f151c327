//! Posterior summaries of the fitted function: additive projections with
//! summary R², variable importance, subgroup trees and partial effects.
//!
//! Under proportional hazards the summarised function is `r(x)`; under
//! non-proportional hazards it is the net survival `S_E(t | x)` at a fixed
//! time `t`.

mod additive;
mod cart;
mod spline;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use additive::{
    loo_variable_importance, summary_r2, AdditiveSummary, Component, Penalty, ProjectionConfig,
    ProjectionDesign, VariableImportance,
};
pub use cart::{
    best_split, cart_importance, fit_cart, CartBranch, CartConfig, CartNode, CartSplit, PruneStep,
    RegressionTree,
};
pub use spline::SplineBasis;

use crate::data::{CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::estimands::{bin_hazards, piecewise_cumulative};
use crate::sampler::{Draw, Mode, PosteriorDraws};
use crate::stats::{mean, quantile_sorted, sort_f64};

/// The summarised function for one draw at covariates `x`.
pub fn target_value(draws: &PosteriorDraws, draw: &Draw, x: &[f64], t: Option<f64>) -> Result<f64> {
    match (draws.mode, t) {
        (Mode::Ph, None) => Ok(draw.r(x, None)),
        (_, Some(t)) => {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::invalid("summary time must be finite and >= 0"));
            }
            let h = bin_hazards(draw, draws.mode, &draws.grid, x);
            Ok((-piecewise_cumulative(&draws.grid, &h, t)).exp())
        }
        (Mode::Nph, None) => Err(Error::invalid(
            "non-proportional summaries need an evaluation time",
        )),
    }
}

/// Per-draw targets at every subject: `r(X_i)` or `S_E(t | X_i)`.
pub fn summary_targets(draws: &PosteriorDraws, dataset: &Dataset, t: Option<f64>) -> Result<Vec<Vec<f64>>> {
    draws
        .draws
        .iter()
        .map(|d| {
            dataset
                .subjects()
                .iter()
                .map(|s| target_value(draws, d, &s.x, t))
                .collect()
        })
        .collect()
}

/// Pointwise posterior mean of per-draw targets.
pub fn posterior_mean(targets: &[Vec<f64>]) -> Vec<f64> {
    let n = targets.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| targets.iter().map(|t| t[i]).sum::<f64>() / targets.len() as f64)
        .collect()
}

/// Fit the subgroup tree to the posterior mean of the targets.
pub fn fit_virtual_twins(targets: &[Vec<f64>], dataset: &Dataset, config: &CartConfig) -> Result<RegressionTree> {
    if targets.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let y = posterior_mean(targets);
    let x: Vec<&[f64]> = dataset.subjects().iter().map(|s| s.x.as_slice()).collect();
    fit_cart(&x, &y, dataset.covariates(), config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEffect {
    pub variable: usize,
    pub values: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid values outside the observed range (numeric) or level set.
    pub extrapolated: Vec<bool>,
    pub level: f64,
}

/// Partial dependence of `f(draw, x)` on covariate `var`: for each grid
/// value, `f` averaged over the dataset with `x[var]` replaced, then
/// summarised across `num_draws` draws.
pub fn partial_effect_with(
    dataset: &Dataset,
    var: usize,
    values: &[f64],
    num_draws: usize,
    level: f64,
    f: impl Fn(usize, &[f64]) -> Result<f64>,
) -> Result<PartialEffect> {
    let Some(spec) = dataset.covariates().get(var) else {
        return Err(Error::invalid(alloc::format!("no covariate with index {var}")));
    };
    if num_draws == 0 {
        return Err(Error::invalid("no posterior draws"));
    }
    let observed: Vec<f64> = dataset.subjects().iter().map(|s| s.x[var]).collect();
    let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let extrapolated = values
        .iter()
        .map(|&v| match spec.kind {
            CovariateKind::Numeric => v < lo || v > hi,
            CovariateKind::Categorical { .. } => !observed.contains(&v),
        })
        .collect();
    if let CovariateKind::Categorical { levels } = spec.kind {
        if values.iter().any(|&v| !(v >= 0.0 && v < levels as f64 && v.fract() == 0.0)) {
            return Err(Error::invalid("categorical grid values must be declared levels"));
        }
    }
    let tail = (1.0 - level) / 2.0;
    let mut out = PartialEffect {
        variable: var,
        values: values.to_vec(),
        mean: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        extrapolated,
        level,
    };
    let mut x = Vec::new();
    for &v in values {
        let mut per_draw = Vec::with_capacity(num_draws);
        for d in 0..num_draws {
            let mut acc = 0.0;
            for s in dataset.subjects() {
                x.clear();
                x.extend_from_slice(&s.x);
                x[var] = v;
                acc += f(d, &x)?;
            }
            per_draw.push(acc / dataset.len() as f64);
        }
        out.mean.push(mean(&per_draw));
        sort_f64(&mut per_draw);
        out.lower.push(quantile_sorted(&per_draw, tail));
        out.upper.push(quantile_sorted(&per_draw, 1.0 - tail));
    }
    Ok(out)
}

pub fn partial_effect(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    var: usize,
    values: &[f64],
    t: Option<f64>,
    level: f64,
) -> Result<PartialEffect> {
    partial_effect_with(dataset, var, values, draws.len(), level, |d, x| {
        target_value(draws, &draws.draws[d], x, t)
    })
}
