//! Additive projections of fitted functions, summary R² and
//! leave-one-variable-out importance.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::spline::SplineBasis;
use crate::data::{CovariateKind, CovariateSpec, Dataset};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::stats::mean;

/// Ridge penalty on the curvature coefficients of each spline component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "snake_case")]
pub enum Penalty {
    /// Chosen per component by generalized cross-validation on the first
    /// backfitting cycle, then held fixed.
    Gcv,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub interior_knots: usize,
    pub penalty: Penalty,
    pub tolerance: f64,
    pub max_cycles: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            interior_knots: 10,
            penalty: Penalty::Gcv,
            tolerance: 1e-8,
            max_cycles: 200,
        }
    }
}

#[derive(Debug, Clone)]
enum Block {
    Spline {
        basis: SplineBasis,
        /// Centred basis rows, `n × k` row-major.
        rows: Vec<f64>,
        xtx: SquareMatrix,
    },
    Levels {
        level: Vec<usize>,
        counts: Vec<usize>,
    },
    Constant,
}

/// Basis matrices for one set of design points, reusable across targets.
#[derive(Debug, Clone)]
pub struct ProjectionDesign {
    n: usize,
    blocks: Vec<Block>,
    config: ProjectionConfig,
}

/// A fitted additive component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Spline {
        basis: SplineBasis,
        coef: Vec<f64>,
        lambda: f64,
    },
    Levels {
        effects: Vec<f64>,
    },
    Zero,
}

impl Component {
    pub fn value(&self, v: f64) -> f64 {
        match self {
            Component::Spline { basis, coef, .. } => {
                basis.row(v).iter().zip(coef).map(|(a, b)| a * b).sum()
            }
            Component::Levels { effects } => effects.get(v as usize).copied().unwrap_or(0.0),
            Component::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSummary {
    pub intercept: f64,
    pub components: Vec<Component>,
    /// `q(x_i)` at the design points.
    pub fitted: Vec<f64>,
    /// Per-component values at the design points.
    pub component_values: Vec<Vec<f64>>,
    pub cycles: usize,
}

impl AdditiveSummary {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .components
                .iter()
                .zip(x)
                .map(|(c, &v)| c.value(v))
                .sum::<f64>()
    }
}

impl ProjectionDesign {
    pub fn from_dataset(dataset: &Dataset, config: ProjectionConfig) -> Self {
        let rows: Vec<&[f64]> = dataset.subjects().iter().map(|s| s.x.as_slice()).collect();
        Self::new(&rows, dataset.covariates(), config)
    }

    pub fn new(rows: &[&[f64]], covariates: &[CovariateSpec], config: ProjectionConfig) -> Self {
        let n = rows.len();
        let blocks = covariates
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let values: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                match spec.kind {
                    CovariateKind::Numeric => {
                        match SplineBasis::new(&values, config.interior_knots) {
                            Some(basis) => {
                                let k = basis.columns();
                                let mut flat = vec![0.0; n * k];
                                for (i, &v) in values.iter().enumerate() {
                                    basis.eval(v, &mut flat[i * k..(i + 1) * k]);
                                }
                                let mut xtx = SquareMatrix::zeros(k);
                                for i in 0..n {
                                    let r = &flat[i * k..(i + 1) * k];
                                    for a in 0..k {
                                        for b in 0..k {
                                            xtx.add(a, b, r[a] * r[b]);
                                        }
                                    }
                                }
                                Block::Spline {
                                    basis,
                                    rows: flat,
                                    xtx,
                                }
                            }
                            None => Block::Constant,
                        }
                    }
                    CovariateKind::Categorical { levels } => {
                        let level: Vec<usize> = values.iter().map(|&v| v as usize).collect();
                        let mut counts = vec![0usize; levels as usize];
                        for &l in &level {
                            counts[l] += 1;
                        }
                        if counts.iter().filter(|&&c| c > 0).count() < 2 {
                            Block::Constant
                        } else {
                            Block::Levels { level, counts }
                        }
                    }
                }
            })
            .collect();
        Self { n, blocks, config }
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_covariates(&self) -> usize {
        self.blocks.len()
    }

    /// Project `target` onto the additive family over the covariates with
    /// `include[j]` set.
    pub fn project(&self, target: &[f64], include: &[bool]) -> Result<AdditiveSummary> {
        if target.len() != self.n {
            return Err(Error::invalid("target length differs from the design"));
        }
        if include.len() != self.blocks.len() {
            return Err(Error::invalid("include mask length differs from covariates"));
        }
        let n = self.n;
        let intercept = mean(target);
        let p = self.blocks.len();
        let mut values = vec![vec![0.0; n]; p];
        let mut coefs: Vec<Vec<f64>> = vec![Vec::new(); p];
        let mut lambdas = vec![0.0; p];
        let mut solvers: Vec<Option<crate::linalg::Cholesky>> = vec![None; p];
        let mut total = vec![0.0; n];
        let mut resid = vec![0.0; n];
        let mut cycles = 0;
        for cycle in 0..self.config.max_cycles {
            cycles = cycle + 1;
            let mut max_change = 0.0f64;
            for j in 0..p {
                if !include[j] {
                    continue;
                }
                for i in 0..n {
                    resid[i] = target[i] - intercept - (total[i] - values[j][i]);
                }
                let new = match &self.blocks[j] {
                    Block::Constant => continue,
                    Block::Levels { level, counts } => {
                        let mut sums = vec![0.0; counts.len()];
                        for (i, &l) in level.iter().enumerate() {
                            sums[l] += resid[i];
                        }
                        let centre = sums.iter().sum::<f64>() / n as f64;
                        let effects: Vec<f64> = sums
                            .iter()
                            .zip(counts)
                            .map(|(s, &c)| if c > 0 { s / c as f64 - centre } else { 0.0 })
                            .collect();
                        let v: Vec<f64> = level.iter().map(|&l| effects[l]).collect();
                        coefs[j] = effects;
                        v
                    }
                    Block::Spline { rows, xtx, .. } => {
                        let k = xtx.dim();
                        let mut xtr = vec![0.0; k];
                        for i in 0..n {
                            let r = &rows[i * k..(i + 1) * k];
                            for a in 0..k {
                                xtr[a] += r[a] * resid[i];
                            }
                        }
                        if solvers[j].is_none() {
                            let lambda = match self.config.penalty {
                                Penalty::Fixed(l) => l,
                                Penalty::Gcv => select_gcv(xtx, &xtr, &resid, n),
                            };
                            lambdas[j] = lambda;
                            solvers[j] = Some(penalised_factor(xtx, lambda)?);
                        }
                        let beta = solvers[j].as_ref().expect("factor set").solve(&xtr);
                        let v: Vec<f64> = (0..n)
                            .map(|i| {
                                rows[i * k..(i + 1) * k]
                                    .iter()
                                    .zip(&beta)
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect();
                        coefs[j] = beta;
                        v
                    }
                };
                for i in 0..n {
                    let change = new[i] - values[j][i];
                    max_change = max_change.max(change.abs());
                    total[i] += change;
                }
                values[j] = new;
            }
            if max_change < self.config.tolerance {
                break;
            }
        }
        let components = (0..p)
            .map(|j| {
                if !include[j] {
                    return Component::Zero;
                }
                match &self.blocks[j] {
                    Block::Constant => Component::Zero,
                    Block::Levels { .. } => Component::Levels {
                        effects: coefs[j].clone(),
                    },
                    Block::Spline { basis, .. } => Component::Spline {
                        basis: basis.clone(),
                        coef: coefs[j].clone(),
                        lambda: lambdas[j],
                    },
                }
            })
            .collect();
        let fitted = total.iter().map(|t| t + intercept).collect();
        Ok(AdditiveSummary {
            intercept,
            components,
            fitted,
            component_values: values,
            cycles,
        })
    }
}

/// `D = diag(0, 1, …, 1)`: the linear column is not penalised.
fn penalised(xtx: &SquareMatrix, lambda: f64) -> SquareMatrix {
    let mut m = xtx.clone();
    for a in 1..m.dim() {
        m.add(a, a, lambda);
    }
    m
}

fn penalised_factor(xtx: &SquareMatrix, lambda: f64) -> Result<crate::linalg::Cholesky> {
    if let Some(c) = penalised(xtx, lambda).cholesky() {
        return Ok(c);
    }
    // Rank-deficient basis: a vanishing ridge on every column.
    let scale = (0..xtx.dim()).map(|a| xtx.get(a, a)).sum::<f64>() / xtx.dim() as f64;
    let mut m = penalised(xtx, lambda);
    for a in 0..m.dim() {
        m.add(a, a, scale * 1e-10);
    }
    m.cholesky()
        .ok_or_else(|| Error::Invariant("spline normal equations are not positive definite".into()))
}

/// Penalty minimising `n · RSS / (n − df)²` over a log-spaced grid.
fn select_gcv(xtx: &SquareMatrix, xtr: &[f64], resid: &[f64], n: usize) -> f64 {
    let k = xtx.dim();
    let scale = (0..k).map(|a| xtx.get(a, a)).sum::<f64>() / k as f64;
    let rtr: f64 = resid.iter().map(|r| r * r).sum();
    let mut best = (f64::INFINITY, scale);
    for step in -16..=16 {
        let lambda = scale * 10f64.powf(step as f64 / 2.0);
        let Ok(chol) = penalised_factor(xtx, lambda) else {
            continue;
        };
        let beta = chol.solve(xtr);
        // RSS = r'r − 2β'X'r + β'X'Xβ
        let mut quad = 0.0;
        for a in 0..k {
            for b in 0..k {
                quad += beta[a] * xtx.get(a, b) * beta[b];
            }
        }
        let cross: f64 = beta.iter().zip(xtr).map(|(b, x)| b * x).sum();
        let rss = (rtr - 2.0 * cross + quad).max(0.0);
        let inv = chol.inverse();
        let mut df = 0.0;
        for a in 0..k {
            for b in 0..k {
                df += inv.get(a, b) * xtx.get(b, a);
            }
        }
        // One more degree of freedom for the intercept.
        let denom = n as f64 - df - 1.0;
        if denom <= 0.0 {
            continue;
        }
        let gcv = n as f64 * rss / (denom * denom);
        if gcv < best.0 {
            best = (gcv, lambda);
        }
    }
    best.1
}

/// `1 − Σ(f − q)² / Σ(f − f̄)²`; `None` for a constant target.
pub fn summary_r2(target: &[f64], projection: &[f64]) -> Option<f64> {
    let m = mean(target);
    let tss: f64 = target.iter().map(|t| (t - m) * (t - m)).sum();
    if !(tss > 0.0) {
        return None;
    }
    let rss: f64 = target
        .iter()
        .zip(projection)
        .map(|(t, q)| (t - q) * (t - q))
        .sum();
    Some(1.0 - rss / tss)
}

/// Summary R² of the full additive projection and of the projections with
/// each covariate left out, one entry per target (posterior draw).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableImportance {
    pub full: Vec<Option<f64>>,
    /// `dropped[p][s]`: R² without covariate `p` for target `s`.
    pub dropped: Vec<Vec<Option<f64>>>,
}

pub fn loo_variable_importance(
    design: &ProjectionDesign,
    targets: &[Vec<f64>],
) -> Result<VariableImportance> {
    let p = design.num_covariates();
    let mut full = Vec::with_capacity(targets.len());
    let mut dropped = vec![Vec::with_capacity(targets.len()); p];
    for target in targets {
        let all = vec![true; p];
        let fit = design.project(target, &all)?;
        full.push(summary_r2(target, &fit.fitted));
        for (j, out) in dropped.iter_mut().enumerate() {
            let mut mask = all.clone();
            mask[j] = false;
            let fit = design.project(target, &mask)?;
            out.push(summary_r2(target, &fit.fitted));
        }
    }
    Ok(VariableImportance { full, dropped })
}
