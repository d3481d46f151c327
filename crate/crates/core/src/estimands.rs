//! Excess hazards, net survival and leave-one-out predictive accuracy
//! derived from posterior draws.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::sampler::{Draw, Mode, PosteriorDraws};
use crate::stats::{log_sum_exp, mean, quantile_sorted, sort_f64, variance};

/// Excess hazard `e^{r}` multiplier of each bin for covariates `x`.
pub fn bin_multipliers(draw: &Draw, mode: Mode, bins: usize, x: &[f64]) -> Vec<f64> {
    match mode {
        Mode::Ph => vec![draw.r(x, None).exp(); bins],
        Mode::Nph => (0..bins).map(|b| draw.r(x, Some(b)).exp()).collect(),
    }
}

/// Per-bin excess hazards `λ_b e^{r(x, b)}`.
pub fn bin_hazards(draw: &Draw, mode: Mode, grid: &TimeGrid, x: &[f64]) -> Vec<f64> {
    bin_multipliers(draw, mode, grid.bins(), x)
        .into_iter()
        .zip(&draw.lambdas)
        .map(|(m, l)| m * l)
        .collect()
}

/// `Λ(t) = Σ_b Z_b(t) h_b` for a piecewise-constant hazard.
pub fn piecewise_cumulative(grid: &TimeGrid, hazards: &[f64], t: f64) -> f64 {
    let last = grid.bin_of(t);
    (0..=last)
        .map(|b| grid.exposure_in(t, b) * hazards[b])
        .sum()
}

/// The `t` with `Λ(t) = target` for a piecewise-constant hazard; infinite
/// when the hazard integrates to less than `target`.
pub fn inverse_cumulative_hazard(grid: &TimeGrid, hazards: &[f64], target: f64) -> f64 {
    let mut acc = 0.0;
    for (b, &h) in hazards.iter().enumerate() {
        let w = grid.width(b);
        let next = acc + h * w;
        if next >= target {
            if h <= 0.0 {
                return grid.lower(b);
            }
            return grid.lower(b) + (target - acc) / h;
        }
        acc = next;
    }
    f64::INFINITY
}

/// `λ_E(t | x)` for one draw.
pub fn excess_hazard(draw: &Draw, mode: Mode, grid: &TimeGrid, x: &[f64], t: f64) -> f64 {
    let b = grid.bin_of(t);
    let r = match mode {
        Mode::Ph => draw.r(x, None),
        Mode::Nph => draw.r(x, Some(b)),
    };
    draw.lambdas[b] * r.exp()
}

/// `Λ_E(t | x) = ∫_0^t λ_E(u | x) du` in closed form.
pub fn cumulative_excess_hazard(draw: &Draw, mode: Mode, grid: &TimeGrid, x: &[f64], t: f64) -> f64 {
    piecewise_cumulative(grid, &bin_hazards(draw, mode, grid, x), t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl SurvivalCurve {
    /// Pointwise mean and equal-tailed bounds of per-draw curves.
    pub fn from_draws(times: &[f64], curves: &[Vec<f64>], level: f64) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::invalid("no posterior draws"));
        }
        let tail = (1.0 - level) / 2.0;
        let mut out = Self {
            times: times.to_vec(),
            mean: Vec::with_capacity(times.len()),
            lower: Vec::with_capacity(times.len()),
            upper: Vec::with_capacity(times.len()),
            level,
        };
        let mut column = vec![0.0; curves.len()];
        for k in 0..times.len() {
            for (c, curve) in column.iter_mut().zip(curves) {
                *c = curve[k];
            }
            out.mean.push(mean(&column));
            sort_f64(&mut column);
            out.lower.push(quantile_sorted(&column, tail));
            out.upper.push(quantile_sorted(&column, 1.0 - tail));
        }
        Ok(out)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("evaluation times must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("evaluation times must be sorted"));
    }
    Ok(())
}

/// `S_E(t | x) = exp(−Λ_E(t | x))` for every draw.
pub fn net_survival_draws(draws: &PosteriorDraws, x: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_times(times)?;
    Ok(draws
        .draws
        .iter()
        .map(|d| {
            let h = bin_hazards(d, draws.mode, &draws.grid, x);
            times
                .iter()
                .map(|&t| (-piecewise_cumulative(&draws.grid, &h, t)).exp())
                .collect()
        })
        .collect())
}

pub fn net_survival(draws: &PosteriorDraws, x: &[f64], times: &[f64], level: f64) -> Result<SurvivalCurve> {
    let curves = net_survival_draws(draws, x, times)?;
    SurvivalCurve::from_draws(times, &curves, level)
}

/// `S_E(t | F_X)` per draw, averaging over the subjects kept by `filter`.
pub fn pop_avg_net_survival_draws(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    times: &[f64],
    filter: impl Fn(&SubjectRecord) -> bool,
) -> Result<Vec<Vec<f64>>> {
    check_times(times)?;
    let kept: Vec<&SubjectRecord> = dataset.subjects().iter().filter(|s| filter(s)).collect();
    if kept.is_empty() {
        return Err(Error::invalid("subgroup filter selects no subjects"));
    }
    let n = kept.len() as f64;
    Ok(draws
        .draws
        .iter()
        .map(|d| {
            let mut acc = vec![0.0; times.len()];
            for s in &kept {
                let h = bin_hazards(d, draws.mode, &draws.grid, &s.x);
                for (a, &t) in acc.iter_mut().zip(times) {
                    *a += (-piecewise_cumulative(&draws.grid, &h, t)).exp();
                }
            }
            acc.iter().map(|a| a / n).collect()
        })
        .collect())
}

pub fn pop_avg_net_survival(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    times: &[f64],
    level: f64,
    filter: impl Fn(&SubjectRecord) -> bool,
) -> Result<SurvivalCurve> {
    let curves = pop_avg_net_survival_draws(draws, dataset, times, filter)?;
    SurvivalCurve::from_draws(times, &curves, level)
}

/// Count of (draw, covariate row) curves on `times` that fail
/// `S_E(0) = 1` or increase somewhere. `times` must be sorted.
pub fn survival_violations(draws: &PosteriorDraws, rows: &[Vec<f64>], times: &[f64]) -> Result<usize> {
    check_times(times)?;
    let mut bad = 0;
    for d in &draws.draws {
        for x in rows {
            let h = bin_hazards(d, draws.mode, &draws.grid, x);
            let s0 = (-piecewise_cumulative(&draws.grid, &h, 0.0)).exp();
            let mut prev = s0;
            let mut ok = s0 == 1.0;
            for &t in times {
                let s = (-piecewise_cumulative(&draws.grid, &h, t)).exp();
                ok &= s <= prev && s >= 0.0;
                prev = s;
            }
            bad += usize::from(!ok);
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elpd {
    pub elpd: f64,
    pub se: f64,
    pub per_obs: Vec<f64>,
}

/// Importance-sampling leave-one-out expected log predictive density from
/// a draws × observations log-likelihood matrix. Raw weights `1/f` are
/// capped at their 99.9th percentile before self-normalisation.
pub fn elpd_loo(loglik: &[Vec<f64>]) -> Result<Elpd> {
    let s = loglik.len();
    if s < 2 {
        return Err(Error::invalid("ELPD needs at least two draws"));
    }
    let n = loglik[0].len();
    if loglik.iter().any(|row| row.len() != n) {
        return Err(Error::invalid("ragged log-likelihood matrix"));
    }
    if loglik.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite log-likelihood"));
    }
    let mut per_obs = Vec::with_capacity(n);
    let mut log_w = vec![0.0; s];
    let mut sorted = vec![0.0; s];
    for i in 0..n {
        for (k, row) in loglik.iter().enumerate() {
            log_w[k] = -row[i];
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Weights scaled by their maximum, so they lie in (0, 1].
        for (w, lw) in sorted.iter_mut().zip(&log_w) {
            *w = (lw - top).exp();
        }
        sort_f64(&mut sorted);
        let cap = quantile_sorted(&sorted, 0.999);
        let log_cap = cap.ln() + top;
        let capped: Vec<f64> = log_w.iter().map(|&lw| lw.min(log_cap)).collect();
        let num: Vec<f64> = capped
            .iter()
            .zip(loglik)
            .map(|(lw, row)| lw + row[i])
            .collect();
        per_obs.push(log_sum_exp(&num) - log_sum_exp(&capped));
    }
    let elpd = per_obs.iter().sum();
    let se = (n as f64 * variance(&per_obs)).sqrt();
    Ok(Elpd { elpd, se, per_obs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Forest, SplitRule, TreeNode, TreePrior};
    use crate::sampler::{ChainDiagnostics, SamplerConfig};
    use alloc::vec;

    fn draw_with(forest: Forest, lambdas: Vec<f64>) -> Draw {
        Draw {
            forest,
            lambdas,
            b_lambda: 1.0,
            omega: None,
            loglik: vec![],
        }
    }

    #[test]
    fn closed_form_examples() {
        let single = TimeGrid::single_bin();
        let d = draw_with(Forest::stumps(2), vec![0.5]);
        assert_eq!(cumulative_excess_hazard(&d, Mode::Ph, &single, &[], 0.0), 0.0);
        assert!((cumulative_excess_hazard(&d, Mode::Ph, &single, &[], 2.0) - 1.0).abs() < 1e-15);

        let grid = TimeGrid::new(vec![1.0]).unwrap();
        let f = Forest {
            trees: vec![TreeNode::branch(
                SplitRule::Time { cut: 0 },
                TreeNode::leaf(0.0),
                TreeNode::leaf(2f64.ln()),
            )],
        };
        let d = draw_with(f, vec![1.0, 1.0]);
        assert!((cumulative_excess_hazard(&d, Mode::Nph, &grid, &[], 1.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let grid = TimeGrid::new(vec![0.5, 1.0, 3.0]).unwrap();
        let h = [0.2, 1.0, 0.0, 0.4];
        for &t in &[0.1, 0.7, 3.5, 10.0] {
            let target = piecewise_cumulative(&grid, &h, t);
            let back = inverse_cumulative_hazard(&grid, &h, target);
            assert!((piecewise_cumulative(&grid, &h, back) - target).abs() < 1e-12);
        }
        assert_eq!(inverse_cumulative_hazard(&grid, &[0.1, 0.0, 0.0, 0.0], 1.0), f64::INFINITY);
    }

    #[test]
    fn degenerate_elpd() {
        let ll = vec![vec![-1.0, -2.5, 0.3]; 50];
        let e = elpd_loo(&ll).unwrap();
        assert!((e.elpd - (-3.2)).abs() < 1e-12);
        assert!(elpd_loo(&ll[..1]).is_err());
    }

    #[test]
    fn survival_curve_single_draw() {
        let draws = PosteriorDraws {
            mode: Mode::Ph,
            grid: TimeGrid::single_bin(),
            prior: TreePrior::default_for(1),
            config: SamplerConfig::default(),
            draws: vec![draw_with(Forest::stumps(1), vec![0.5])],
            diagnostics: ChainDiagnostics::default(),
        };
        let c = net_survival(&draws, &[], &[0.0, 2.0], 0.9).unwrap();
        assert_eq!(c.mean[0], 1.0);
        assert!((c.mean[1] - (-1.0f64).exp()).abs() < 1e-15);
    }
}
