//! Independent oracles shared by the integration tests and the acceptance
//! harness. Each check returns the worst discrepancy it saw; callers
//! compare that against their tolerance.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relsurv_core::estimands::inverse_cumulative_hazard;
use relsurv_core::forest::{sample_tree, TreeNode};
use relsurv_core::sampler::{
    bin_exposure_direct, bin_exposure_recursive, OpCount, SamplerState, TimeSplits,
};
use relsurv_core::special::{digamma, ln_gamma, trigamma};
use relsurv_core::stats::{batch_means_se, mean, sample_exp};
use relsurv_core::summaries::{
    best_split, fit_cart, summary_r2, CartConfig, CartNode, Component, Penalty, ProjectionConfig,
    ProjectionDesign,
};
use relsurv_core::{
    CovariateSpec, Dataset, Forest, Mode, SamplerConfig, SubjectRecord, TimeGrid,
};

// ----- numerics ---------------------------------------------------------

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Moments of the density proportional to `exp(log_f(u))` on the real
/// line: `(ln ∫ e^{log_f}, E[g(u)], Var[g(u)])`, by composite Simpson on
/// the window where the integrand is within `e^{-60}` of its peak.
pub fn quad_moments(log_f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let (lo, hi, step) = (-300.0, 300.0, 0.01);
    let mut peak = f64::NEG_INFINITY;
    let mut u = lo;
    while u <= hi {
        peak = peak.max(log_f(u));
        u += step;
    }
    let mut a = lo;
    while log_f(a + step) < peak - 60.0 {
        a += step;
    }
    let mut b = hi;
    while log_f(b - step) < peak - 60.0 {
        b -= step;
    }
    let n = 200_000usize;
    let h = (b - a) / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let u = a + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = w * (log_f(u) - peak).exp();
        let gu = g(u);
        z += f;
        m1 += f * gu;
        m2 += f * gu * gu;
    }
    let mean = m1 / z;
    let var = m2 / z - mean * mean;
    ((z * h / 3.0).ln() + peak, mean, var)
}

fn log_gamma_density_log_scale(mu: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * mu - rate * mu.exp()
}

// ----- tiny sampler states ------------------------------------------------

pub fn tiny_covariates() -> Vec<CovariateSpec> {
    vec![CovariateSpec::numeric("x"), CovariateSpec::categorical("g", 3)]
}

/// A random cohort of `n` subjects with one numeric and one three-level
/// covariate, follow-up in `(0.01, 3)` and constant population hazards.
pub fn random_cohort(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let subjects = (0..n)
        .map(|_| {
            let x = vec![rng.random::<f64>(), rng.random_range(0..3) as f64];
            SubjectRecord::new(
                0.01 + 2.99 * rng.random::<f64>(),
                rng.random::<f64>() < 0.7,
                x,
                0.01 + 0.5 * rng.random::<f64>(),
            )
        })
        .collect();
    Dataset::new(subjects, tiny_covariates()).expect("valid cohort")
}

/// Up to `max_bins` bins with random boundaries in `(0, 2)`.
pub fn random_grid(max_bins: usize, rng: &mut ChaCha8Rng) -> TimeGrid {
    let bins = rng.random_range(1..=max_bins);
    let mut cuts: Vec<f64> = (1..bins).map(|_| 0.05 + 1.9 * rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    TimeGrid::new(cuts).expect("increasing cuts")
}

pub fn tiny_config(mode: Mode, num_trees: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        mode,
        num_trees,
        iterations: 2,
        burn_in: 0,
        thin: 1,
        seed,
        b_lambda_shape: 2.0,
        b_lambda_rate: 1.5,
        ..Default::default()
    }
}

/// `r(x, b)` of every tree except `skip`, summed tree by tree.
fn partial_fit(forest: &Forest, skip: Option<usize>, x: &[f64], bin: Option<usize>) -> f64 {
    forest
        .trees
        .iter()
        .enumerate()
        .filter(|(s, _)| Some(*s) != skip)
        .map(|(_, t)| t.eval(x, bin))
        .sum()
}

/// Per-subject `(bin, exposure)` pairs computed from the cut points alone.
fn exposures(cuts: &[f64], y: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut lo = 0.0;
    for b in 0..=cuts.len() {
        let hi = cuts.get(b).copied().unwrap_or(f64::INFINITY);
        if y < lo {
            break;
        }
        out.push((b, y.min(hi) - lo));
        if y < hi {
            break;
        }
        lo = hi;
    }
    out
}

/// Worst discrepancies of one tiny state against quadrature.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConjugacyErrors {
    /// `|Δ ln ∫|` of the integrated tree likelihood.
    pub tree_marginal: f64,
    /// Relative error of leaf-posterior mean and variance of `μ`.
    pub leaf_moments: f64,
    /// Relative error of `λ_b` full-conditional mean and variance.
    pub lambda_moments: f64,
    /// Relative error of `b_λ` full-conditional mean and variance.
    pub b_lambda_moments: f64,
    /// Absolute error of the augmentation probabilities.
    pub augmentation: f64,
}

impl ConjugacyErrors {
    pub fn worst(&self) -> f64 {
        self.tree_marginal
            .max(self.leaf_moments)
            .max(self.lambda_moments)
            .max(self.b_lambda_moments)
            .max(self.augmentation)
    }
}

/// Build a random tiny state (`N ≤ 8`, `B ≤ 3`, at most three trees) and
/// compare every conjugate update against numerical integration of the
/// augmented likelihood written subject by subject.
pub fn conjugacy_case(seed: u64) -> ConjugacyErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = if seed.is_multiple_of(2) { Mode::Ph } else { Mode::Nph };
    let n = rng.random_range(2..=8);
    let data = random_cohort(n, &mut rng);
    let grid = random_grid(3, &mut rng);
    let m = rng.random_range(1..=3);
    let config = tiny_config(mode, m, seed);
    let mut state = SamplerState::new(&data, &grid, &config).expect("state");
    state.sample_parameters_from_prior().expect("proper prior");
    state.augment().expect("positive hazards");

    let forest = state.forest().clone();
    let lambdas = state.lambdas().to_vec();
    let b_lambda = state.b_lambda();
    let d = state.indicators().to_vec();
    let prior = *state.prior();
    let subjects = data.subjects();
    let cuts = grid.cuts().to_vec();
    let bin_arg = |b: usize| (mode == Mode::Nph).then_some(b);
    let mut err = ConjugacyErrors::default();

    // Augmentation probabilities.
    let probs = state.augmentation_probabilities().expect("positive hazards");
    for (s, p) in subjects.iter().zip(&probs) {
        let expected = if s.delta {
            let b = exposures(&cuts, s.y).last().expect("bin").0;
            let h = lambdas[b] * partial_fit(&forest, None, &s.x, bin_arg(b)).exp();
            h / (h + s.pop_hazard)
        } else {
            0.0
        };
        err.augmentation = err.augmentation.max((p - expected).abs());
    }

    // Tree marginal likelihood and leaf posteriors, on the current tree and
    // on a fresh prior draw.
    let t = rng.random_range(0..m);
    let candidate = sample_tree(state.space(), &state.split_probs(), &prior, Some(3), &mut rng);
    for tree in [forest.trees[t].clone(), candidate] {
        let computed = state.tree_log_likelihood(t, &tree);
        let stats = state.tree_leaf_stats(t, &tree);
        let mut quadrature = 0.0;
        for (leaf, st) in stats.iter().enumerate() {
            let mut terms: Vec<(bool, f64)> = Vec::new();
            for (i, s) in subjects.iter().enumerate() {
                let ex = exposures(&cuts, s.y);
                let last = ex.len() - 1;
                match mode {
                    Mode::Ph => {
                        if tree.leaf_index(&s.x, None) != leaf {
                            continue;
                        }
                        let cum: f64 = ex.iter().map(|&(b, z)| lambdas[b] * z).sum();
                        let rest = partial_fit(&forest, Some(t), &s.x, None).exp();
                        terms.push((d[i], cum * rest));
                    }
                    Mode::Nph => {
                        for (k, &(b, z)) in ex.iter().enumerate() {
                            if tree.leaf_index(&s.x, Some(b)) != leaf {
                                continue;
                            }
                            let rest = partial_fit(&forest, Some(t), &s.x, Some(b)).exp();
                            terms.push((d[i] && k == last, lambdas[b] * z * rest));
                        }
                    }
                }
            }
            let log_f = |mu: f64| {
                let e = mu.exp();
                log_gamma_density_log_scale(mu, prior.leaf_shape, prior.leaf_rate)
                    + terms
                        .iter()
                        .map(|&(ev, c)| if ev { mu - c * e } else { -c * e })
                        .sum::<f64>()
            };
            let (ln_z, mu_mean, mu_var) = quad_moments(log_f, |u| u);
            quadrature += ln_z;
            let shape = prior.leaf_shape + st.events;
            let rate = prior.leaf_rate + st.exposure;
            err.leaf_moments = err
                .leaf_moments
                .max(rel_err(digamma(shape) - rate.ln(), mu_mean, 1.0))
                .max(rel_err(trigamma(shape), mu_var, 1e-300));
        }
        err.tree_marginal = err.tree_marginal.max((computed - quadrature).abs());
    }

    // Baseline rates.
    let cond = state.lambda_conditionals();
    for (b, &(shape, rate)) in cond.iter().enumerate() {
        let mut events = 0.0;
        let mut exposure = 0.0;
        for (i, s) in subjects.iter().enumerate() {
            let ex = exposures(&cuts, s.y);
            let last = ex.len() - 1;
            for (k, &(bb, z)) in ex.iter().enumerate() {
                if bb != b {
                    continue;
                }
                if d[i] && k == last {
                    events += 1.0;
                }
                exposure += z * partial_fit(&forest, None, &s.x, bin_arg(b)).exp();
            }
        }
        let log_f = |u: f64| config.a_lambda * u - b_lambda * u.exp() + events * u - exposure * u.exp();
        let (_, m1, var) = quad_moments(log_f, f64::exp);
        err.lambda_moments = err
            .lambda_moments
            .max(rel_err(shape / rate, m1, 1e-300))
            .max(rel_err(shape / (rate * rate), var, 1e-300));
    }

    // Rate hyperparameter.
    let (shape, rate) = state.b_lambda_conditional();
    let log_f = |u: f64| {
        config.b_lambda_shape * u - config.b_lambda_rate * u.exp()
            + lambdas
                .iter()
                .map(|l| config.a_lambda * u - u.exp() * l)
                .sum::<f64>()
    };
    let (_, m1, var) = quad_moments(log_f, f64::exp);
    err.b_lambda_moments = rel_err(shape / rate, m1, 1e-300).max(rel_err(shape / (rate * rate), var, 1e-300));
    err
}

// ----- bin exposure -------------------------------------------------------

/// Worst per-bin relative error of the recursive exposure sums against a
/// subject-by-subject double loop, and the operation counts.
pub struct RecursionCase {
    pub subjects: usize,
    pub bins: usize,
    pub worst: f64,
    pub ops: OpCount,
}

pub fn recursion_case(seed: u64) -> RecursionCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=500);
    let bins = rng.random_range(1..=20);
    let mut cuts: Vec<f64> = (1..bins).map(|_| 5.0 * rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.retain(|&c| c > 0.0);
    let grid = TimeGrid::new(cuts.clone()).expect("cuts");
    let y: Vec<f64> = (0..n)
        .map(|_| match rng.random_range(0..10) {
            // Exactly on a boundary or at zero.
            0 if !cuts.is_empty() => cuts[rng.random_range(0..cuts.len())],
            1 => 0.0,
            _ => sample_exp(&mut rng, 0.5),
        })
        .collect();
    let exp_r: Vec<f64> = (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0).exp()).collect();

    let mut direct = vec![0.0; grid.bins()];
    for (&yi, &e) in y.iter().zip(&exp_r) {
        for (b, z) in exposures(&cuts, yi) {
            direct[b] += z * e;
        }
    }
    let bins_of: Vec<usize> = y.iter().map(|&v| grid.bin_of(v)).collect();
    let within: Vec<f64> = y.iter().zip(&bins_of).map(|(&v, &b)| v - grid.lower(b)).collect();
    let mut ops = OpCount::default();
    let rec = bin_exposure_recursive(&grid, &bins_of, &within, &exp_r, &mut ops);
    let lib_direct = bin_exposure_direct(&grid, &y, &exp_r);
    let worst = rec
        .iter()
        .zip(&direct)
        .zip(&lib_direct)
        .map(|((r, d), l)| rel_err(*r, *d, 1e-300).max(rel_err(*l, *d, 1e-300)))
        .fold(0.0, f64::max);
    RecursionCase {
        subjects: n,
        bins: grid.bins(),
        worst,
        ops,
    }
}

/// Worst value of `|Σ_b Z_b λ_b − (λ_{b(y)}(y − t_{b(y)}) + F_{b(y)})|` in
/// units of `B · ε · |value|`.
pub fn identity_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = rng.random_range(1..=20);
    let mut cuts: Vec<f64> = (1..bins).map(|_| 10.0 * rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let grid = TimeGrid::new(cuts).expect("cuts");
    let rates: Vec<f64> = (0..grid.bins()).map(|_| 3.0 * rng.random::<f64>()).collect();
    let offsets = grid.cumulative_offsets(&rates);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let y = 12.0 * rng.random::<f64>();
        let (z, _) = grid.exposure(y);
        let lhs: f64 = z.iter().zip(&rates).map(|(a, b)| a * b).sum();
        let rhs = grid.cumulative_baseline(y, &rates, &offsets);
        let scale = grid.bins() as f64 * f64::EPSILON * lhs.abs().max(f64::MIN_POSITIVE);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

// ----- NPH against PH -----------------------------------------------------

/// Largest relative discrepancy between a PH state and an NPH state with
/// time splits excluded, run in lockstep from the same seed: after every
/// PH sweep the NPH state is given the PH parameters and indicators and
/// the two are compared on augmentation probabilities, integrated tree
/// likelihoods, rate conditionals and per-subject log-likelihoods.
pub fn nph_matches_ph(seed: u64, sweeps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = random_cohort(60, &mut rng);
    let grid = TimeGrid::new(vec![0.5, 1.0, 2.0]).expect("cuts");
    let ph_cfg = tiny_config(Mode::Ph, 10, seed);
    let nph_cfg = SamplerConfig {
        mode: Mode::Nph,
        time_splits: TimeSplits::Excluded,
        ..ph_cfg.clone()
    };
    let mut ph = SamplerState::new(&data, &grid, &ph_cfg).expect("ph");
    let mut nph = SamplerState::new(&data, &grid, &nph_cfg).expect("nph");
    let mut worst = 0.0f64;
    let cmp = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| rel_err(*x, *y, 1e-300))
            .fold(0.0, f64::max)
    };
    for _ in 0..sweeps {
        ph.step().expect("ph sweep");
        nph.set_parameters(ph.forest().clone(), ph.lambdas().to_vec(), ph.b_lambda(), nph.omega())
            .expect("parameters");
        nph.set_indicators(ph.indicators()).expect("indicators");
        worst = worst.max(cmp(
            &ph.augmentation_probabilities().expect("ph"),
            &nph.augmentation_probabilities().expect("nph"),
        ));
        worst = worst.max(cmp(&ph.loglik().expect("ph"), &nph.loglik().expect("nph")));
        let flat = |c: Vec<(f64, f64)>| c.into_iter().flat_map(|(a, b)| [a, b]).collect::<Vec<_>>();
        worst = worst.max(cmp(&flat(ph.lambda_conditionals()), &flat(nph.lambda_conditionals())));
        let probs = ph.split_probs();
        for t in 0..ph.forest().len() {
            let cand = sample_tree(ph.space(), &probs, ph.prior(), Some(4), &mut rng);
            for tree in [ph.forest().trees[t].clone(), cand] {
                worst = worst.max(rel_err(
                    ph.tree_log_likelihood(t, &tree),
                    nph.tree_log_likelihood(t, &tree),
                    1e-300,
                ));
            }
        }
    }
    worst
}

// ----- joint correctness ----------------------------------------------------

/// Successive-conditional simulation against independent prior draws.
#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    /// Combined Monte Carlo standard error of the difference.
    pub se: f64,
}

impl GewekeStat {
    pub fn z(&self) -> f64 {
        (self.chain_mean - self.prior_mean) / self.se
    }
}

fn geweke_stats(forest: &Forest, lambdas: &[f64], b_lambda: f64, omega: Option<f64>) -> Vec<f64> {
    let leaves =
        forest.trees.iter().map(TreeNode::leaf_count).sum::<usize>() as f64 / forest.len() as f64;
    let mut v = lambdas.to_vec();
    v.push(leaves);
    v.push(b_lambda);
    v.extend(omega);
    v
}

/// Redraw `(y, δ)` from the model given the state's parameters: excess
/// times from the piecewise hazards, population times at the subject's
/// constant hazard and uniform censoring on `(0, 3)`.
fn simulate_outcomes(state: &mut SamplerState, data: &Dataset) -> (Vec<f64>, Vec<bool>) {
    let forest = state.forest().clone();
    let lambdas = state.lambdas().to_vec();
    let grid = state.grid().clone();
    let mode = state.mode();
    let rng = state.rng_mut();
    let mut y = Vec::with_capacity(data.len());
    let mut delta = Vec::with_capacity(data.len());
    for s in data.subjects() {
        let hazards: Vec<f64> = (0..grid.bins())
            .map(|b| lambdas[b] * forest.eval(&s.x, (mode == Mode::Nph).then_some(b)).exp())
            .collect();
        let t_e = inverse_cumulative_hazard(&grid, &hazards, sample_exp(rng, 1.0));
        let t_p = sample_exp(rng, s.pop_hazard);
        let c = 3.0 * (1.0 - rng.random::<f64>());
        let death = t_e.min(t_p);
        y.push(death.min(c));
        delta.push(death < c);
    }
    (y, delta)
}

/// Geweke test at `N = 20`, `B = 3`, `M = 5`, `P = 2` numeric covariates
/// with a `Gamma(4, 3)` prior on `b_λ`. Reports the mean of every `λ_b`,
/// the mean leaf count, `b_λ` and (non-proportional) `ω`.
pub fn geweke(mode: Mode, cycles: usize, seed: u64) -> Vec<GewekeStat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..20)
        .map(|_| {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            SubjectRecord::new(1.0, false, x, 0.05 + 0.25 * rng.random::<f64>())
        })
        .collect();
    let data = Dataset::new(
        subjects,
        vec![CovariateSpec::numeric("x1"), CovariateSpec::numeric("x2")],
    )
    .expect("cohort");
    let grid = TimeGrid::new(vec![0.5, 1.5]).expect("cuts");
    let config = SamplerConfig {
        mode,
        num_trees: 5,
        iterations: cycles,
        burn_in: 0,
        thin: 1,
        seed,
        b_lambda_shape: 4.0,
        b_lambda_rate: 3.0,
        ..Default::default()
    };
    let omega_of = |s: &SamplerState| (mode == Mode::Nph).then_some(s.omega());

    // Independent prior draws.
    let mut prior_state = SamplerState::new(&data, &grid, &config).expect("state");
    let mut prior_draws: Vec<Vec<f64>> = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        prior_state.sample_parameters_from_prior().expect("proper prior");
        prior_draws.push(geweke_stats(
            prior_state.forest(),
            prior_state.lambdas(),
            prior_state.b_lambda(),
            omega_of(&prior_state),
        ));
    }

    // Successive conditionals, started from a prior draw.
    let mut state = SamplerState::new(&data, &grid, &config).expect("state");
    state.sample_parameters_from_prior().expect("proper prior");
    let mut chain: Vec<Vec<f64>> = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let (y, delta) = simulate_outcomes(&mut state, &data);
        state.set_outcomes(&y, &delta).expect("outcomes");
        state.step().expect("sweep");
        chain.push(geweke_stats(state.forest(), state.lambdas(), state.b_lambda(), omega_of(&state)));
    }

    let mut names: Vec<String> = (0..grid.bins()).map(|b| format!("lambda_{b}")).collect();
    names.push("mean leaf count".into());
    names.push("b_lambda".into());
    if mode == Mode::Nph {
        names.push("omega".into());
    }
    names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let p: Vec<f64> = prior_draws.iter().map(|v| v[k]).collect();
            let c: Vec<f64> = chain.iter().map(|v| v[k]).collect();
            let se_p = batch_means_se(&p, 50);
            let se_c = batch_means_se(&c, 50);
            GewekeStat {
                name,
                prior_mean: mean(&p),
                chain_mean: mean(&c),
                se: (se_p * se_p + se_c * se_c).sqrt(),
            }
        })
        .collect()
}

// ----- summaries --------------------------------------------------------------

/// Dense symmetric solve by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("rows");
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// The 200-point factorial: `a` and `b` on ten levels each and a
/// two-level factor, with a nonlinear target that has an interaction.
pub fn factorial_design() -> (Vec<Vec<f64>>, Vec<CovariateSpec>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for a in 0..10 {
        for b in 0..10 {
            for g in 0..2 {
                let (av, bv) = (a as f64 / 3.0, (b as f64 - 4.5).powi(2) / 10.0);
                rows.push(vec![av, b as f64, g as f64]);
                target.push(av.sin() + bv + 0.7 * g as f64 + 0.3 * g as f64 * av);
            }
        }
    }
    let covs = vec![
        CovariateSpec::numeric("a"),
        CovariateSpec::numeric("b"),
        CovariateSpec::categorical("g", 2),
    ];
    (rows, covs, target)
}

/// Largest absolute difference between the backfitted additive projection
/// and a joint penalized least-squares solve with the same bases and
/// penalties, for a fixed and a cross-validated penalty.
pub fn additive_vs_exact() -> f64 {
    let (rows, covs, target) = factorial_design();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let mut worst = 0.0f64;
    for penalty in [Penalty::Fixed(0.5), Penalty::Gcv] {
        let cfg = ProjectionConfig {
            penalty,
            tolerance: 1e-12,
            max_cycles: 5000,
            ..Default::default()
        };
        let design = ProjectionDesign::new(&refs, &covs, cfg);
        let fit = design.project(&target, &[true, true, true]).expect("projection");

        // Columns: intercept, spline blocks, then the level-1 dummy.
        let n = rows.len();
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        let mut penalties = vec![0.0];
        for (j, comp) in fit.components[..2].iter().enumerate() {
            let Component::Spline { basis, lambda, .. } = comp else {
                panic!("numeric covariates give spline components");
            };
            let basis_rows: Vec<Vec<f64>> = rows.iter().map(|r| basis.row(r[j])).collect();
            for c in 0..basis.columns() {
                cols.push(basis_rows.iter().map(|r| r[c]).collect());
                penalties.push(if c == 0 { 0.0 } else { *lambda });
            }
        }
        cols.push(rows.iter().map(|r| r[2]).collect());
        penalties.push(0.0);

        let k = cols.len();
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        for a in 0..k {
            for b in 0..k {
                xtx[a][b] = (0..n).map(|i| cols[a][i] * cols[b][i]).sum();
            }
            xtx[a][a] += penalties[a];
            xty[a] = (0..n).map(|i| cols[a][i] * target[i]).sum();
        }
        let beta = dense_solve(xtx, xty);
        for i in 0..n {
            let exact: f64 = (0..k).map(|a| cols[a][i] * beta[a]).sum();
            worst = worst.max((exact - fit.fitted[i]).abs());
        }
    }
    worst
}

/// Largest relative difference in gain between `best_split` and an
/// exhaustive search over every threshold and every level subset, on
/// random data sets of at most 40 points.
pub fn cart_vs_brute_force(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=40);
    let covs = vec![
        CovariateSpec::numeric("u"),
        CovariateSpec::categorical("g", 4),
        CovariateSpec::numeric("v"),
    ];
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            vec![
                (10.0 * rng.random::<f64>()).round(),
                rng.random_range(0..4) as f64,
                rng.random::<f64>(),
            ]
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * 0.3 + [0.0, 2.0, -1.0, 0.5][r[1] as usize] + rng.random::<f64>())
        .collect();
    let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let min_node = rng.random_range(1..=3);
    let idx: Vec<usize> = (0..n).collect();
    let lib = best_split(&x, &y, &idx, &covs, min_node).map(|(g, _)| g);
    let brute = brute_force_gain(&x, &y, &idx, min_node);
    match (lib, brute) {
        (Some(a), Some(b)) => rel_err(a, b, 1e-12),
        (None, None) => 0.0,
        (a, b) => panic!("split existence differs: {a:?} vs {b:?}"),
    }
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - m) * (y[i] - m)).sum()
}

/// Best SSE reduction over numeric thresholds on columns 0 and 2 and every
/// subset of the levels of column 1.
fn brute_force_gain(x: &[&[f64]], y: &[f64], idx: &[usize], min_node: usize) -> Option<f64> {
    let parent = sse(y, idx);
    let mut best: Option<f64> = None;
    let mut try_split = |left: Vec<usize>, right: Vec<usize>| {
        if left.len() < min_node || right.len() < min_node || left.is_empty() || right.is_empty() {
            return;
        }
        let g = parent - sse(y, &left) - sse(y, &right);
        if g > 1e-12 * parent.max(1e-300) && best.is_none_or(|b| g > b) {
            best = Some(g);
        }
    };
    for var in [0usize, 2] {
        let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][var]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let cut = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][var] <= cut);
            try_split(l, r);
        }
    }
    for mask in 1u32..15 {
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| (mask >> (x[i][1] as u32)) & 1 == 1);
        try_split(l, r);
    }
    best
}

/// Every split of a fully grown, unpruned tree is the exhaustive best split
/// of the points reaching it; returns the worst relative gain gap.
pub fn cart_tree_vs_brute_force(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            vec![
                (10.0 * rng.random::<f64>()).round(),
                rng.random_range(0..4) as f64,
                rng.random::<f64>(),
            ]
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| if r[0] > 4.0 { 1.0 } else { 0.0 } + if r[2] > 0.5 { 2.0 } else { 0.0 } + 0.2 * rng.random::<f64>())
        .collect();
    let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let covs = vec![
        CovariateSpec::numeric("u"),
        CovariateSpec::categorical("g", 4),
        CovariateSpec::numeric("v"),
    ];
    let cfg = CartConfig {
        max_depth: 3,
        min_node_size: Some(2),
        cp: 0.0,
    };
    let tree = fit_cart(&x, &y, &covs, &cfg).expect("tree");
    fn walk(node: &CartNode, idx: Vec<usize>, x: &[&[f64]], y: &[f64], worst: &mut f64) {
        if let Some(b) = &node.split {
            let brute = brute_force_gain(x, y, &idx, 2).expect("split exists");
            *worst = worst.max(rel_err(b.gain, brute, 1e-12));
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| b.rule.goes_left(x[i]));
            walk(&b.left, l, x, y, worst);
            walk(&b.right, r, x, y, worst);
        }
    }
    let mut worst = 0.0;
    walk(&tree.root, (0..n).collect(), &x, &y, &mut worst);
    worst
}

/// Two covariates with four unequal cell means: a depth-two tree must
/// recover every cell. Returns the largest prediction error.
pub fn cart_four_cells() -> (usize, f64) {
    let means = [[0.0, 1.0], [1.5, 4.0]];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..10 {
                rows.push(vec![a as f64 + 0.01 * k as f64, b as f64]);
                y.push(means[a][b]);
            }
        }
    }
    let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let covs = vec![CovariateSpec::numeric("a"), CovariateSpec::categorical("b", 2)];
    let cfg = CartConfig {
        max_depth: 2,
        min_node_size: Some(5),
        cp: 0.0,
    };
    let tree = fit_cart(&x, &y, &covs, &cfg).expect("tree");
    let worst = x
        .iter()
        .zip(&y)
        .map(|(r, v)| (tree.predict(r) - v).abs())
        .fold(0.0, f64::max);
    (tree.leaf_count(), worst)
}

/// `(R² of a perfect fit, R² of the mean)`: exactly one and zero.
pub fn r2_trivial() -> (Option<f64>, Option<f64>) {
    let t = [0.3, -1.2, 4.0, 2.5, 0.0];
    let m = t.iter().sum::<f64>() / t.len() as f64;
    (summary_r2(&t, &t), summary_r2(&t, &[m; 5]))
}
