use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::likelihood::{
    bin_exposure_direct, bin_exposure_recursive, excess_event_probability,
    integrated_log_likelihood, log_total_hazard, LeafStats, OpCount,
};
use super::{ChainDiagnostics, Draw, Mode, SamplerConfig, TimeSplits};
use crate::data::{Dataset, TimeGrid};
use crate::error::{Error, Result};
use crate::forest::{
    log_tree_prior, propose, sample_omega_prior, sample_tree, update_omega, FlatTree, Forest,
    SplitProbs, SplitSpace, TreeNode, TreePrior,
};
use crate::stats::{sample_gamma, sample_log_gamma};

/// Units of the backfitting likelihood: subjects under proportional
/// hazards, `(subject, bin)` pairs otherwise. Units of one subject are
/// contiguous and the last one is the bin containing `y`.
#[derive(Debug, Clone, Default)]
struct Units {
    subject: Vec<u32>,
    bin: Vec<u32>,
    /// Exposure inside `bin`: `y − t_b` for subjects, `Z_ib` for pairs.
    z: Vec<f64>,
    start: Vec<usize>,
}

impl Units {
    fn build(mode: Mode, grid: &TimeGrid, y: &[f64]) -> Self {
        let mut u = Units::default();
        for (i, &yi) in y.iter().enumerate() {
            u.start.push(u.subject.len());
            let bi = grid.bin_of(yi);
            match mode {
                Mode::Ph => {
                    u.subject.push(i as u32);
                    u.bin.push(bi as u32);
                    u.z.push(yi - grid.lower(bi));
                }
                Mode::Nph => {
                    for b in 0..=bi {
                        u.subject.push(i as u32);
                        u.bin.push(b as u32);
                        u.z.push(grid.exposure_in(yi, b));
                    }
                }
            }
        }
        u.start.push(u.subject.len());
        u
    }

    fn len(&self) -> usize {
        self.subject.len()
    }

    fn event_unit(&self, i: usize) -> usize {
        self.start[i + 1] - 1
    }
}

/// The full state of one Markov chain.
#[derive(Debug, Clone)]
pub struct SamplerState {
    mode: Mode,
    config: SamplerConfig,
    prior: TreePrior,
    grid: TimeGrid,
    space: SplitSpace,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    delta: Vec<bool>,
    pop: Vec<f64>,
    units: Units,

    forest: Forest,
    /// Leaf values per tree, depth-first.
    mu: Vec<Vec<f64>>,
    /// Leaf reached by every unit in every tree, row-major by tree.
    leaf_of: Vec<u32>,
    /// `r` at every unit.
    eta: Vec<f64>,
    lambdas: Vec<f64>,
    b_lambda: f64,
    omega: f64,
    d: Vec<bool>,
    /// `c_u`, the baseline cumulative hazard carried by each unit.
    weight: Vec<f64>,

    rng: ChaCha8Rng,
    iteration: usize,
    diagnostics: ChainDiagnostics,
    last_ops: OpCount,
    scratch_exp: Vec<f64>,
    scratch_leaf: Vec<u32>,
}

impl SamplerState {
    pub fn new(dataset: &Dataset, grid: &TimeGrid, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let prior = config.tree_prior()?;
        let mode = config.mode;
        let p = dataset.num_covariates();
        let time_bins = (mode == Mode::Nph).then_some(grid.bins());
        let space = SplitSpace::from_dataset(dataset, time_bins);
        let subjects = dataset.subjects();
        let mut x = Vec::with_capacity(subjects.len() * p);
        for s in subjects {
            x.extend_from_slice(&s.x);
        }
        let y: Vec<f64> = subjects.iter().map(|s| s.y).collect();
        let delta: Vec<bool> = subjects.iter().map(|s| s.delta).collect();
        let pop: Vec<f64> = subjects.iter().map(|s| s.pop_hazard).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let forest = Forest {
            trees: (0..config.num_trees)
                .map(|_| TreeNode::leaf(prior.sample_leaf(&mut rng)))
                .collect(),
        };
        let events = delta.iter().filter(|&&d| d).count();
        let follow_up: f64 = y.iter().sum();
        let rate0 = if follow_up > 0.0 {
            events.max(1) as f64 / follow_up
        } else {
            1.0
        };
        let omega = match config.time_splits {
            TimeSplits::Fixed(w) => w,
            _ => {
                let s = 1.0 / p.max(1) as f64;
                s / (s + 1.0)
            }
        };
        let mut state = Self {
            mode,
            config: config.clone(),
            prior,
            grid: grid.clone(),
            space,
            p,
            x,
            d: delta.clone(),
            y,
            delta,
            pop,
            units: Units::default(),
            forest,
            mu: Vec::new(),
            leaf_of: Vec::new(),
            eta: Vec::new(),
            lambdas: vec![rate0; grid.bins()],
            b_lambda: 1.0,
            omega,
            weight: Vec::new(),
            rng,
            iteration: 0,
            diagnostics: ChainDiagnostics::default(),
            last_ops: OpCount::default(),
            scratch_exp: Vec::new(),
            scratch_leaf: Vec::new(),
        };
        state.rebuild();
        Ok(state)
    }

    // ----- accessors -------------------------------------------------

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn prior(&self) -> &TreePrior {
        &self.prior
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn space(&self) -> &SplitSpace {
        &self.space
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn b_lambda(&self) -> f64 {
        self.b_lambda
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn indicators(&self) -> &[bool] {
        &self.d
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    /// Work done by the most recent proportional-hazards rate update.
    pub fn last_lambda_ops(&self) -> OpCount {
        self.last_ops
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Split probabilities in force for the current `ω`.
    pub fn split_probs(&self) -> SplitProbs {
        match (self.mode, self.config.time_splits) {
            (Mode::Ph, _) | (Mode::Nph, TimeSplits::Excluded) => SplitProbs::uniform(self.p),
            (Mode::Nph, _) => SplitProbs::with_time(self.p, self.omega),
        }
    }

    fn x_of(&self, subject: usize) -> &[f64] {
        &self.x[subject * self.p..(subject + 1) * self.p]
    }

    fn bin_arg(&self, u: usize) -> Option<usize> {
        match self.mode {
            Mode::Ph => None,
            Mode::Nph => Some(self.units.bin[u] as usize),
        }
    }

    /// `r(x_i)` (or `r(x_i, b_i)`) at the end of follow-up, per subject.
    pub fn r_at_exit(&self) -> Vec<f64> {
        (0..self.y.len())
            .map(|i| self.eta[self.units.event_unit(i)])
            .collect()
    }

    // ----- state surgery ----------------------------------------------

    /// Recompute every cache from the forest, rates and outcomes.
    fn rebuild(&mut self) {
        self.units = Units::build(self.mode, &self.grid, &self.y);
        let nu = self.units.len();
        let m = self.forest.len();
        self.mu = self.forest.trees.iter().map(TreeNode::leaf_values).collect();
        self.leaf_of = vec![0; m * nu];
        self.eta = vec![0.0; nu];
        for t in 0..m {
            let flat = FlatTree::new(&self.forest.trees[t]);
            for u in 0..nu {
                let s = self.units.subject[u] as usize;
                let leaf = flat.leaf_of(self.x_of(s), self.bin_arg(u));
                self.leaf_of[t * nu + u] = leaf as u32;
                self.eta[u] += self.mu[t][leaf];
            }
        }
        self.refresh_weights();
        self.scratch_exp = vec![0.0; nu];
        self.scratch_leaf = vec![0; nu];
    }

    fn refresh_weights(&mut self) {
        let offsets = self.grid.cumulative_offsets(&self.lambdas);
        let nu = self.units.len();
        self.weight.resize(nu, 0.0);
        for u in 0..nu {
            let b = self.units.bin[u] as usize;
            self.weight[u] = match self.mode {
                Mode::Ph => self.lambdas[b] * self.units.z[u] + offsets[b],
                Mode::Nph => self.lambdas[b] * self.units.z[u],
            };
        }
    }

    /// Replace the outcomes, keeping covariates and population hazards.
    pub fn set_outcomes(&mut self, y: &[f64], delta: &[bool]) -> Result<()> {
        if y.len() != self.y.len() || delta.len() != self.y.len() {
            return Err(Error::invalid("outcome vectors must match the subject count"));
        }
        if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("follow-up times must be finite and >= 0"));
        }
        self.y = y.to_vec();
        self.delta = delta.to_vec();
        self.d = delta.to_vec();
        self.rebuild();
        Ok(())
    }

    /// Replace all model parameters.
    pub fn set_parameters(
        &mut self,
        forest: Forest,
        lambdas: Vec<f64>,
        b_lambda: f64,
        omega: f64,
    ) -> Result<()> {
        if forest.len() != self.config.num_trees {
            return Err(Error::invalid("forest size differs from num_trees"));
        }
        if lambdas.len() != self.grid.bins() || lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("need one positive rate per bin"));
        }
        if !forest.trees.iter().all(|t| t.is_valid(&self.space)) {
            return Err(Error::invalid("forest contains a tree with an empty region"));
        }
        self.forest = forest;
        self.lambdas = lambdas;
        self.b_lambda = b_lambda;
        self.omega = omega;
        self.rebuild();
        Ok(())
    }

    pub fn set_indicators(&mut self, d: &[bool]) -> Result<()> {
        if d.len() != self.d.len() || d.iter().zip(&self.delta).any(|(&di, &de)| di && !de) {
            return Err(Error::invalid("indicators must satisfy d_i <= delta_i"));
        }
        self.d = d.to_vec();
        Ok(())
    }

    /// Draw every parameter from its prior. Needs a proper `b_λ` prior.
    pub fn sample_parameters_from_prior(&mut self) -> Result<()> {
        if !(self.config.b_lambda_rate > 0.0) {
            return Err(Error::config(
                "sampling from the prior needs a proper b_lambda prior (rate > 0)",
            ));
        }
        if self.mode == Mode::Nph && !matches!(self.config.time_splits, TimeSplits::Fixed(_)) {
            self.omega = sample_omega_prior(self.p, &mut self.rng);
        }
        let probs = self.split_probs();
        let rng = &mut self.rng;
        let trees = (0..self.config.num_trees)
            .map(|_| sample_tree(&self.space, &probs, &self.prior, None, rng))
            .collect();
        self.forest = Forest { trees };
        self.b_lambda = sample_gamma(rng, self.config.b_lambda_shape, self.config.b_lambda_rate);
        for l in self.lambdas.iter_mut() {
            *l = sample_gamma(rng, self.config.a_lambda, self.b_lambda);
        }
        self.rebuild();
        Ok(())
    }

    // ----- conditional quantities ----------------------------------------

    /// `P(d_i = 1 | ·)` per subject (zero for censored subjects).
    pub fn augmentation_probabilities(&self) -> Result<Vec<f64>> {
        (0..self.y.len())
            .map(|i| {
                if !self.delta[i] {
                    return Ok(0.0);
                }
                let u = self.units.event_unit(i);
                let log_excess = self.lambdas[self.units.bin[u] as usize].ln() + self.eta[u];
                excess_event_probability(self.pop[i], log_excess)
                    .ok_or(Error::ZeroHazardEvent(i))
            })
            .collect()
    }

    fn unit_event(&self, u: usize) -> bool {
        let s = self.units.subject[u] as usize;
        self.d[s] && u == self.units.event_unit(s)
    }

    fn fill_residual_exposure(&mut self, t: usize) {
        let nu = self.units.len();
        let row = &self.leaf_of[t * nu..(t + 1) * nu];
        let mu = &self.mu[t];
        for u in 0..nu {
            self.scratch_exp[u] = self.weight[u] * (self.eta[u] - mu[row[u] as usize]).exp();
        }
    }

    fn leaf_stats(&self, leaves: &[u32], count: usize) -> Vec<LeafStats> {
        let mut stats = vec![LeafStats::default(); count];
        if self.config.prior_only {
            return stats;
        }
        for (u, &l) in leaves.iter().enumerate() {
            let s = &mut stats[l as usize];
            s.exposure += self.scratch_exp[u];
            if self.unit_event(u) {
                s.events += 1.0;
            }
        }
        stats
    }

    fn assign_leaves(&self, tree: &TreeNode, out: &mut [u32]) {
        let flat = FlatTree::new(tree);
        for (u, slot) in out.iter_mut().enumerate() {
            let s = self.units.subject[u] as usize;
            *slot = flat.leaf_of(self.x_of(s), self.bin_arg(u)) as u32;
        }
    }

    /// Integrated log-likelihood of `tree` in place of tree `t`, with the
    /// other trees held at their current values.
    pub fn tree_log_likelihood(&mut self, t: usize, tree: &TreeNode) -> f64 {
        self.fill_residual_exposure(t);
        let mut leaves = vec![0u32; self.units.len()];
        self.assign_leaves(tree, &mut leaves);
        let stats = self.leaf_stats(&leaves, tree.leaf_count());
        integrated_log_likelihood(&stats, self.prior.leaf_shape, self.prior.leaf_rate)
    }

    /// Leaf sufficient statistics of `tree` in place of tree `t`.
    pub fn tree_leaf_stats(&mut self, t: usize, tree: &TreeNode) -> Vec<LeafStats> {
        self.fill_residual_exposure(t);
        let mut leaves = vec![0u32; self.units.len()];
        self.assign_leaves(tree, &mut leaves);
        self.leaf_stats(&leaves, tree.leaf_count())
    }

    /// Per-bin `(events, exposure)`: `A_b = Σ d_i 1(b_i = b)` and
    /// `B_b = Σ_i Z_ib e^{r}`.
    pub fn bin_sums(&mut self) -> (Vec<f64>, Vec<f64>) {
        let nb = self.grid.bins();
        let mut events = vec![0.0; nb];
        if self.config.prior_only {
            return (events, vec![0.0; nb]);
        }
        for i in 0..self.y.len() {
            if self.d[i] {
                events[self.units.bin[self.units.event_unit(i)] as usize] += 1.0;
            }
        }
        let exposure = match self.mode {
            Mode::Ph => {
                let bins: Vec<usize> = self.units.bin.iter().map(|&b| b as usize).collect();
                let exp_r: Vec<f64> = self.eta.iter().map(|e| e.exp()).collect();
                let mut ops = OpCount::default();
                let rec = bin_exposure_recursive(&self.grid, &bins, &self.units.z, &exp_r, &mut ops);
                self.last_ops = ops;
                rec
            }
            Mode::Nph => {
                let mut out = vec![0.0; nb];
                for u in 0..self.units.len() {
                    out[self.units.bin[u] as usize] += self.units.z[u] * self.eta[u].exp();
                }
                out
            }
        };
        (events, exposure)
    }

    /// `(shape, rate)` of each `λ_b` full conditional.
    pub fn lambda_conditionals(&mut self) -> Vec<(f64, f64)> {
        let (a, b) = self.bin_sums();
        a.iter()
            .zip(&b)
            .map(|(&ab, &bb)| (self.config.a_lambda + ab, self.b_lambda + bb))
            .collect()
    }

    /// `(shape, rate)` of the `b_λ` full conditional.
    pub fn b_lambda_conditional(&self) -> (f64, f64) {
        (
            self.lambdas.len() as f64 * self.config.a_lambda + self.config.b_lambda_shape,
            self.config.b_lambda_rate + self.lambdas.iter().sum::<f64>(),
        )
    }

    /// Per-subject `δ_i ln(λ_P + λ_E(Y_i)) − Λ_E(Y_i)`.
    pub fn loglik(&self) -> Result<Vec<f64>> {
        let n = self.y.len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.units.start[i], self.units.start[i + 1]);
            let cum: f64 = (lo..hi).map(|u| self.weight[u] * self.eta[u].exp()).sum();
            let mut v = -cum;
            if self.delta[i] {
                let u = hi - 1;
                let log_excess = self.lambdas[self.units.bin[u] as usize].ln() + self.eta[u];
                let lh = log_total_hazard(self.pop[i], log_excess);
                if lh == f64::NEG_INFINITY {
                    return Err(Error::ZeroHazardEvent(i));
                }
                v += lh;
            }
            *o = v;
        }
        Ok(out)
    }

    pub fn draw(&self) -> Result<Draw> {
        Ok(Draw {
            forest: self.forest.clone(),
            lambdas: self.lambdas.clone(),
            b_lambda: self.b_lambda,
            omega: (self.mode == Mode::Nph).then_some(self.omega),
            loglik: self.loglik()?,
        })
    }

    // ----- Gibbs steps ----------------------------------------------

    /// Redraw every `d_i`.
    pub fn augment(&mut self) -> Result<()> {
        let probs = self.augmentation_probabilities()?;
        for (i, p) in probs.into_iter().enumerate() {
            self.d[i] = self.delta[i] && (p >= 1.0 || self.rng.random::<f64>() < p);
        }
        Ok(())
    }

    /// One Metropolis-Hastings update of tree `t` followed by a Gibbs
    /// refresh of its leaf values. Returns whether the proposal was
    /// accepted.
    pub fn update_tree(&mut self, t: usize) -> bool {
        let nu = self.units.len();
        let (a, b) = (self.prior.leaf_shape, self.prior.leaf_rate);
        self.fill_residual_exposure(t);
        let current = self.forest.trees[t].clone();
        let cur_stats = self.leaf_stats(&self.leaf_of[t * nu..(t + 1) * nu], current.leaf_count());

        let probs = self.split_probs();
        let proposal = propose(&current, &self.space, &probs, &mut self.rng);
        let mut accepted = false;
        let mut stats = cur_stats;
        if let Some(new_tree) = proposal.tree {
            let mut leaves = core::mem::take(&mut self.scratch_leaf);
            self.assign_leaves(&new_tree, &mut leaves);
            let new_stats = self.leaf_stats(&leaves, new_tree.leaf_count());
            let log_alpha = proposal.log_ratio
                + integrated_log_likelihood(&new_stats, a, b)
                - integrated_log_likelihood(&stats, a, b)
                + log_tree_prior(&new_tree, &self.space, &probs, &self.prior)
                - log_tree_prior(&current, &self.space, &probs, &self.prior);
            if log_alpha >= 0.0 || self.rng.random::<f64>().ln() < log_alpha {
                accepted = true;
                stats = new_stats;
                // Remove the old contribution before the assignment changes.
                let row = &mut self.leaf_of[t * nu..(t + 1) * nu];
                let old_mu = &self.mu[t];
                for u in 0..nu {
                    self.eta[u] -= old_mu[row[u] as usize];
                }
                row.copy_from_slice(&leaves);
                self.forest.trees[t] = new_tree;
                self.mu[t] = vec![0.0; stats.len()];
            }
            self.scratch_leaf = leaves;
        }
        self.diagnostics.moves.record(proposal.kind, accepted);

        let new_mu: Vec<f64> = stats
            .iter()
            .map(|s| sample_log_gamma(&mut self.rng, a + s.events, b + s.exposure))
            .collect();
        let row = &self.leaf_of[t * nu..(t + 1) * nu];
        let old_mu = &self.mu[t];
        for u in 0..nu {
            let l = row[u] as usize;
            self.eta[u] += new_mu[l] - old_mu[l];
        }
        self.forest.trees[t].set_leaf_values(&new_mu);
        self.mu[t] = new_mu;
        accepted
    }

    pub fn update_lambdas(&mut self) {
        let cond = self.lambda_conditionals();
        for (l, (shape, rate)) in self.lambdas.iter_mut().zip(cond) {
            *l = sample_gamma(&mut self.rng, shape, rate);
        }
        self.refresh_weights();
    }

    pub fn update_b_lambda(&mut self) {
        let (shape, rate) = self.b_lambda_conditional();
        self.b_lambda = sample_gamma(&mut self.rng, shape, rate);
    }

    pub fn update_split_probs(&mut self) {
        if self.mode != Mode::Nph {
            return;
        }
        match self.config.time_splits {
            TimeSplits::Learned => {
                let up = update_omega(&self.forest, &self.space, self.p, self.omega, &mut self.rng);
                self.diagnostics.omega_proposed += 1;
                if up.accepted {
                    self.diagnostics.omega_accepted += 1;
                }
                self.omega = up.omega;
            }
            TimeSplits::Excluded => self.omega = sample_omega_prior(self.p, &mut self.rng),
            TimeSplits::Fixed(_) => {}
        }
    }

    /// One full iteration: augmentation, every tree, the rates, `b_λ` and
    /// (non-proportional) `ω`.
    pub fn step(&mut self) -> Result<()> {
        self.augment()?;
        for t in 0..self.forest.len() {
            self.update_tree(t);
        }
        self.update_lambdas();
        self.update_b_lambda();
        self.update_split_probs();
        self.iteration += 1;
        if cfg!(debug_assertions) && self.iteration.is_multiple_of(100) {
            self.check_consistency()?;
        }
        Ok(())
    }

    /// Compare cached fits and rate sums against full recomputation.
    pub fn check_consistency(&mut self) -> Result<()> {
        for u in 0..self.units.len() {
            let s = self.units.subject[u] as usize;
            let direct = self.forest.eval(self.x_of(s), self.bin_arg(u));
            if (direct - self.eta[u]).abs() > 1e-8 * (1.0 + direct.abs()) {
                return Err(Error::Invariant(format!(
                    "cached fit {} differs from forest value {direct} at unit {u}",
                    self.eta[u]
                )));
            }
        }
        if self.mode == Mode::Ph && !self.config.prior_only {
            let (_, rec) = self.bin_sums();
            let exp_r: Vec<f64> = self.eta.iter().map(|e| e.exp()).collect();
            let direct = bin_exposure_direct(&self.grid, &self.y, &exp_r);
            for (r, d) in rec.iter().zip(&direct) {
                if (r - d).abs() > 1e-10 * d.abs().max(1e-300) && (r - d).abs() > 1e-300 {
                    return Err(Error::Invariant(format!(
                        "recursive bin exposure {r} differs from direct sum {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}
