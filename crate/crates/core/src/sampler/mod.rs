//! Bayesian backfitting samplers for the proportional and
//! non-proportional excess-hazard models.

mod likelihood;
mod state;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use likelihood::{
    bin_exposure_direct, bin_exposure_recursive, excess_event_probability,
    integrated_log_likelihood, leaf_log_marginal, log_total_hazard, LeafStats, OpCount,
};
pub use state::SamplerState;

use crate::data::{Dataset, TimeGrid};
use crate::error::{Error, Result};
use crate::forest::{Forest, MoveKind, TreePrior};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `λ_E(t | x) = λ_0(t) e^{r(x)}`.
    #[default]
    Ph,
    /// `λ_E(t | x) = λ_b e^{r(x, b)}` for `t` in bin `b`.
    Nph,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ph => "PH",
            Mode::Nph => "NPH",
        }
    }
}

/// How the non-proportional sampler treats the time-bin coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "omega", rename_all = "snake_case")]
pub enum TimeSplits {
    /// `ω ~ Beta(1/P, 1)`, updated every iteration.
    Learned,
    /// `ω` held at the given value.
    Fixed(f64),
    /// The time coordinate is never proposed; `ω` is drawn from its prior.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub mode: Mode,
    pub num_trees: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Root split probability.
    pub gamma: f64,
    /// Depth decay of the split probability.
    pub beta: f64,
    /// Leaf scale; `1.5 / sqrt(num_trees)` when absent.
    pub sigma_mu: Option<f64>,
    /// Shape of the `Gam(a_λ, b_λ)` prior on each baseline rate.
    pub a_lambda: f64,
    /// `Gamma(shape, rate)` hyperprior on `b_λ`; shape 1 and rate 0 give
    /// the flat prior.
    pub b_lambda_shape: f64,
    pub b_lambda_rate: f64,
    pub time_splits: TimeSplits,
    /// Drop the likelihood and sample the prior.
    pub prior_only: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ph,
            num_trees: 100,
            iterations: 11_000,
            burn_in: 1_000,
            thin: 10,
            seed: 1,
            gamma: 0.95,
            beta: 2.0,
            sigma_mu: None,
            a_lambda: 1.0,
            b_lambda_shape: 1.0,
            b_lambda_rate: 0.0,
            time_splits: TimeSplits::Learned,
            prior_only: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::config("num_trees must be at least 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config(alloc::format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in,
                self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        if !(self.a_lambda > 0.0 && self.a_lambda.is_finite()) {
            return Err(Error::config("a_lambda must be positive"));
        }
        if !(self.b_lambda_shape > 0.0 && self.b_lambda_rate >= 0.0) {
            return Err(Error::config(
                "b_lambda hyperprior needs shape > 0 and rate >= 0",
            ));
        }
        if let TimeSplits::Fixed(w) = self.time_splits {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config("fixed omega must lie in [0, 1]"));
            }
        }
        self.tree_prior().map(|_| ())
    }

    pub fn tree_prior(&self) -> Result<TreePrior> {
        let sigma = self
            .sigma_mu
            .unwrap_or(1.5 / libm::sqrt(self.num_trees as f64));
        TreePrior::new(self.gamma, self.beta, sigma)
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in) % self.thin == self.thin - 1
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub forest: Forest,
    pub lambdas: Vec<f64>,
    pub b_lambda: f64,
    pub omega: Option<f64>,
    /// `δ_i ln(λ_P + λ_E(Y_i)) − Λ_E(Y_i)` per subject; the population
    /// cumulative hazard is omitted as it does not depend on the model.
    pub loglik: Vec<f64>,
}

impl Draw {
    /// `r(x)` or `r(x, bin)`.
    pub fn r(&self, x: &[f64], bin: Option<usize>) -> f64 {
        self.forest.eval(x, bin)
    }

    pub fn total_loglik(&self) -> f64 {
        self.loglik.iter().sum()
    }
}

/// Proposal and acceptance counts by move type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl MoveStats {
    pub fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let p = self.proposed[kind.index()];
        if p == 0 {
            0.0
        } else {
            self.accepted[kind.index()] as f64 / p as f64
        }
    }

    pub fn merge(&mut self, other: &MoveStats) {
        for k in 0..4 {
            self.proposed[k] += other.proposed[k];
            self.accepted[k] += other.accepted[k];
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub moves: MoveStats,
    pub omega_proposed: u64,
    pub omega_accepted: u64,
    /// Total log-likelihood at every iteration, burn-in included.
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub mode: Mode,
    pub grid: TimeGrid,
    pub prior: TreePrior,
    pub config: SamplerConfig,
    pub draws: Vec<Draw>,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Per-draw, per-subject log-likelihood matrix.
    pub fn loglik_matrix(&self) -> Vec<Vec<f64>> {
        self.draws.iter().map(|d| d.loglik.clone()).collect()
    }

    /// Concatenate chains fit with the same model and grid.
    pub fn combine(chains: Vec<PosteriorDraws>) -> Result<PosteriorDraws> {
        let mut it = chains.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::invalid("no chains to combine"))?;
        for c in it {
            if c.mode != out.mode || c.grid != out.grid {
                return Err(Error::invalid("chains differ in mode or time grid"));
            }
            out.draws.extend(c.draws);
            out.diagnostics.moves.merge(&c.diagnostics.moves);
            out.diagnostics.omega_proposed += c.diagnostics.omega_proposed;
            out.diagnostics.omega_accepted += c.diagnostics.omega_accepted;
            out.diagnostics.loglik_trace.extend(c.diagnostics.loglik_trace);
        }
        Ok(out)
    }
}

/// Run one chain and keep the thinned post-burn-in draws.
pub fn run(dataset: &Dataset, grid: &TimeGrid, config: &SamplerConfig) -> Result<PosteriorDraws> {
    run_with(dataset, grid, config, |_, _| {})
}

/// As [`run`], calling `progress(iteration, state)` after every iteration.
pub fn run_with(
    dataset: &Dataset,
    grid: &TimeGrid,
    config: &SamplerConfig,
    mut progress: impl FnMut(usize, &SamplerState),
) -> Result<PosteriorDraws> {
    let mut state = SamplerState::new(dataset, grid, config)?;
    let mut draws = Vec::with_capacity(config.retained());
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        state.step()?;
        let keep = config.keeps(it);
        if keep {
            let d = state.draw()?;
            trace.push(d.total_loglik());
            draws.push(d);
        } else {
            trace.push(state.loglik()?.iter().sum());
        }
        progress(it, &state);
    }
    let mut diagnostics = state.diagnostics().clone();
    diagnostics.loglik_trace = trace;
    Ok(PosteriorDraws {
        mode: config.mode,
        grid: grid.clone(),
        prior: *state.prior(),
        config: config.clone(),
        draws,
        diagnostics,
    })
}

pub fn run_ph(dataset: &Dataset, grid: &TimeGrid, config: &SamplerConfig) -> Result<PosteriorDraws> {
    let mut c = config.clone();
    c.mode = Mode::Ph;
    run(dataset, grid, &c)
}

pub fn run_nph(dataset: &Dataset, grid: &TimeGrid, config: &SamplerConfig) -> Result<PosteriorDraws> {
    let mut c = config.clone();
    c.mode = Mode::Nph;
    run(dataset, grid, &c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retained_count() {
        let c = SamplerConfig {
            iterations: 1100,
            burn_in: 100,
            thin: 10,
            ..Default::default()
        };
        assert_eq!(c.retained(), 100);
        assert_eq!((0..1100).filter(|&i| c.keeps(i)).count(), 100);
        let d = SamplerConfig::default();
        assert_eq!(d.iterations, 11_000);
        assert_eq!(d.retained(), 1000);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = SamplerConfig {
            iterations: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.burn_in = 2;
        c.thin = 0;
        assert!(c.validate().is_err());
        c.thin = 1;
        assert!(c.validate().is_ok());
    }
}
