//! Simulation study: synthetic cohorts with known excess hazards, and the
//! RMSE, coverage and interval-length scores of fitted models against them.
//!
//! Cohorts mimic an acute-leukaemia registry with four covariates (age,
//! sex, white-cell count and a deprivation score). Each subject's observed
//! time is the minimum of an excess-hazard death time, a population death
//! time drawn from a life table, and a uniform censoring time.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSpec, Dataset, LifeTable, SubjectRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::estimands::{bin_hazards, inverse_cumulative_hazard, piecewise_cumulative};
use crate::forest::{Forest, SplitRule, TreeNode};
use crate::linalg::SquareMatrix;
use crate::sampler::PosteriorDraws;
use crate::stats::{mean, quantile_sorted, sample_exp, sample_normal, sort_f64};

/// Covariate columns of simulated cohorts.
pub const COVARIATE_NAMES: [&str; 4] = ["age", "sex", "wbc", "tpi"];
const AGE: usize = 0;
const SEX: usize = 1;
const WBC: usize = 2;
const TPI: usize = 3;

/// Oldest attained age in the synthetic life table.
pub const LIFE_TABLE_MAX_AGE: i64 = 150;

/// Censoring bound giving about 30% censoring under the default
/// [`MechanismKind::CoxLinear`] mechanism (see [`calibrate_c_max`]).
pub const DEFAULT_C_MAX: f64 = 7.216;

pub fn covariate_specs() -> Vec<CovariateSpec> {
    vec![
        CovariateSpec::numeric("age"),
        CovariateSpec::categorical("sex", 2),
        CovariateSpec::numeric("wbc"),
        CovariateSpec::numeric("tpi"),
    ]
}

/// One subject's covariates: age in years, sex (0 female, 1 male), white
/// cell count truncated at 500 and a deprivation score.
pub fn sample_covariates<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let age = (64.0 + 16.0 * sample_normal(rng)).clamp(16.0, 95.0);
    let sex = if rng.random::<f64>() < 0.45 { 0.0 } else { 1.0 };
    let wbc = (2.6 + 1.5 * sample_normal(rng)).exp().clamp(0.1, 500.0);
    let tpi = (0.3 + 3.5 * sample_normal(rng)).clamp(-7.0, 10.0);
    vec![age, sex, wbc, tpi]
}

/// Gompertz mortality per year for attained age `age_year`.
pub fn gompertz_rate(sex: i64, age_year: i64) -> f64 {
    let base = (-10.2 + 0.094 * age_year as f64).exp();
    if sex == 0 {
        0.65 * base
    } else {
        base
    }
}

/// Life table keyed by sex with yearly Gompertz rates for ages
/// `0..=LIFE_TABLE_MAX_AGE`.
pub fn synthetic_life_table() -> LifeTable {
    let mut table = LifeTable::new();
    for sex in 0..2 {
        for age in 0..=LIFE_TABLE_MAX_AGE {
            table
                .insert(vec![sex], age, gompertz_rate(sex, age))
                .expect("Gompertz rates are finite");
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    CoxLinear,
    WeibullLinear,
    WeibullSpline,
    TreeEnsemble,
    NphTreeEnsemble,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        MechanismKind::CoxLinear,
        MechanismKind::WeibullLinear,
        MechanismKind::WeibullSpline,
        MechanismKind::TreeEnsemble,
        MechanismKind::NphTreeEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::CoxLinear => "cox_linear",
            MechanismKind::WeibullLinear => "weibull_linear",
            MechanismKind::WeibullSpline => "weibull_spline",
            MechanismKind::TreeEnsemble => "tree_ensemble",
            MechanismKind::NphTreeEnsemble => "nph_tree_ensemble",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::config(alloc::format!(
                    "unknown mechanism `{name}`; valid kinds: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn is_proportional(self) -> bool {
        self != MechanismKind::NphTreeEnsemble
    }
}

/// Baseline excess hazard `λ_0(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// Constant `rates[b]` on the bins of `cuts`.
    Piecewise { cuts: Vec<f64>, rates: Vec<f64> },
    /// `Λ_0(t) = (t / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    fn validate(&self) -> Result<()> {
        match self {
            Baseline::Piecewise { cuts, rates } => {
                TimeGrid::new(cuts.clone())?;
                if rates.len() != cuts.len() + 1 {
                    return Err(Error::config("piecewise baseline needs one rate per bin"));
                }
                if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return Err(Error::config("baseline rates must be positive"));
                }
            }
            Baseline::Weibull { shape, scale } => {
                if !(*shape > 0.0 && *scale > 0.0 && shape.is_finite() && scale.is_finite()) {
                    return Err(Error::config("Weibull shape and scale must be positive"));
                }
            }
        }
        Ok(())
    }

    fn grid(&self) -> Option<TimeGrid> {
        match self {
            Baseline::Piecewise { cuts, .. } => TimeGrid::new(cuts.clone()).ok(),
            Baseline::Weibull { .. } => None,
        }
    }
}

/// A cubic B-spline `Σ_j c_j B_j(x)` on a clamped knot vector over
/// `[lo, hi]`; arguments outside are clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTerm {
    pub var: usize,
    pub lo: f64,
    pub hi: f64,
    pub interior: Vec<f64>,
    /// `interior.len() + 4` coefficients.
    pub coefs: Vec<f64>,
}

impl SplineTerm {
    fn validate(&self) -> Result<()> {
        let mut prev = self.lo;
        for &k in self.interior.iter().chain(core::iter::once(&self.hi)) {
            if !(k > prev) {
                return Err(Error::config("spline knots must be strictly increasing"));
            }
            prev = k;
        }
        if self.coefs.len() != self.interior.len() + 4 {
            return Err(Error::config("spline needs interior knots + 4 coefficients"));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        const P: usize = 3;
        let mut t = vec![self.lo; P + 1];
        t.extend_from_slice(&self.interior);
        t.extend(core::iter::repeat_n(self.hi, P + 1));
        let n = self.coefs.len();
        let x = x.clamp(self.lo, self.hi);
        let mut k = P;
        while k + 1 < n && x >= t[k + 1] {
            k += 1;
        }
        // de Boor's algorithm on the span [t_k, t_{k+1}).
        let mut d: Vec<f64> = (0..=P).map(|j| self.coefs[j + k - P]).collect();
        for r in 1..=P {
            for j in (r..=P).rev() {
                let lo = t[j + k - P];
                let hi = t[j + 1 + k - r];
                let alpha = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[P]
    }
}

/// Covariate part of the log excess hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// `r(x) = Σ_j β_j (x_j − center_j)`.
    Linear { beta: Vec<f64>, center: Vec<f64> },
    /// `r(x) = Σ_j β_j x_j + Σ_k s_k(x)`.
    Additive { beta: Vec<f64>, splines: Vec<SplineTerm> },
    /// `r(x)` (or `r(x, b)` when `time_varying`, with `b` the bin of the
    /// piecewise baseline) given by a fixed forest.
    Forest { forest: Forest, time_varying: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub baseline: Baseline,
    pub effect: Effect,
    /// Upper bound of the uniform censoring distribution.
    pub c_max: f64,
    pub life_table: LifeTable,
}

fn leaf(mu: f64) -> TreeNode {
    TreeNode::leaf(mu)
}

fn num(var: usize, cut: f64, left: TreeNode, right: TreeNode) -> TreeNode {
    TreeNode::branch(SplitRule::Numeric { var, cut }, left, right)
}

fn female(left: TreeNode, right: TreeNode) -> TreeNode {
    TreeNode::branch(SplitRule::Categorical { var: SEX, left: 1 }, left, right)
}

fn early(cut: usize, left: TreeNode, right: TreeNode) -> TreeNode {
    TreeNode::branch(SplitRule::Time { cut }, left, right)
}

const LINEAR_BETA: [f64; 4] = [0.03, 0.2, 0.002, 0.05];
const LINEAR_CENTER: [f64; 4] = [64.0, 0.0, 0.0, 0.0];
const PH_CUTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const PH_RATES: [f64; 6] = [0.9, 0.7, 0.5, 0.3, 0.15, 0.08];

impl Mechanism {
    /// The documented default parameter set of each kind.
    pub fn default_for(kind: MechanismKind) -> Self {
        let piecewise = Baseline::Piecewise {
            cuts: PH_CUTS.to_vec(),
            rates: PH_RATES.to_vec(),
        };
        let weibull = Baseline::Weibull {
            shape: 0.75,
            scale: 2.0,
        };
        let linear = Effect::Linear {
            beta: LINEAR_BETA.to_vec(),
            center: LINEAR_CENTER.to_vec(),
        };
        let (baseline, effect) = match kind {
            MechanismKind::CoxLinear => (piecewise, linear),
            MechanismKind::WeibullLinear => (weibull, linear),
            MechanismKind::WeibullSpline => (
                weibull,
                Effect::Additive {
                    beta: vec![0.0, 0.25, 0.0, 0.0],
                    splines: vec![
                        SplineTerm {
                            var: AGE,
                            lo: 16.0,
                            hi: 95.0,
                            interior: vec![45.0, 60.0, 75.0],
                            coefs: vec![-0.6, -0.6, -0.5, -0.2, 0.5, 0.9, 1.0],
                        },
                        SplineTerm {
                            var: WBC,
                            lo: 0.0,
                            hi: 500.0,
                            interior: vec![10.0, 40.0, 150.0],
                            coefs: vec![-0.4, -0.3, 0.2, 0.7, 0.8, 0.9, 0.9],
                        },
                        SplineTerm {
                            var: TPI,
                            lo: -7.0,
                            hi: 10.0,
                            interior: vec![0.0, 4.0],
                            coefs: vec![0.2, -0.1, -0.2, 0.0, 0.5, 0.6],
                        },
                    ],
                },
            ),
            MechanismKind::TreeEnsemble => (
                piecewise,
                Effect::Forest {
                    forest: Forest {
                        trees: vec![
                            num(
                                AGE,
                                60.0,
                                female(leaf(-0.6), leaf(-0.2)),
                                num(WBC, 50.0, leaf(0.3), leaf(0.9)),
                            ),
                            num(TPI, 2.0, leaf(-0.2), leaf(0.35)),
                            num(WBC, 10.0, leaf(-0.3), num(AGE, 75.0, leaf(0.1), leaf(0.6))),
                            female(leaf(-0.05), num(TPI, 4.0, leaf(-0.05), leaf(0.45))),
                        ],
                    },
                    time_varying: false,
                },
            ),
            MechanismKind::NphTreeEnsemble => (
                Baseline::Piecewise {
                    cuts: vec![0.5, 1.0, 2.0, 4.0],
                    rates: vec![0.8, 0.5, 0.3, 0.15, 0.08],
                },
                Effect::Forest {
                    forest: Forest {
                        trees: vec![
                            // Age effect that reverses after six months.
                            early(
                                0,
                                num(AGE, 65.0, leaf(-0.7), leaf(0.7)),
                                num(AGE, 65.0, leaf(0.4), leaf(-0.4)),
                            ),
                            // White-cell effect only after the first year.
                            early(1, leaf(0.0), num(WBC, 30.0, leaf(-0.4), leaf(0.6))),
                            female(leaf(-0.2), leaf(0.2)),
                            num(TPI, 2.0, leaf(-0.15), leaf(0.25)),
                        ],
                    },
                    time_varying: true,
                },
            ),
        };
        Self {
            kind,
            baseline,
            effect,
            c_max: DEFAULT_C_MAX,
            life_table: synthetic_life_table(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if !(self.c_max >= 0.0 && self.c_max.is_finite()) {
            return Err(Error::config("c_max must be finite and >= 0"));
        }
        let p = COVARIATE_NAMES.len();
        match &self.effect {
            Effect::Linear { beta, center } => {
                if beta.len() != p || center.len() != p {
                    return Err(Error::config(alloc::format!(
                        "linear effect needs {p} coefficients and centers"
                    )));
                }
            }
            Effect::Additive { beta, splines } => {
                if beta.len() != p {
                    return Err(Error::config(alloc::format!("additive effect needs {p} coefficients")));
                }
                for s in splines {
                    if s.var >= p {
                        return Err(Error::config("spline term refers to an unknown covariate"));
                    }
                    s.validate()?;
                }
            }
            Effect::Forest {
                forest,
                time_varying,
            } => {
                let bins = match (&self.baseline, time_varying) {
                    (Baseline::Piecewise { rates, .. }, true) => Some(rates.len()),
                    (_, true) => {
                        return Err(Error::config(
                            "time-varying forest effects need a piecewise baseline",
                        ))
                    }
                    (_, false) => None,
                };
                for tree in &forest.trees {
                    for rule in tree.rules() {
                        let ok = match rule {
                            SplitRule::Numeric { var, .. } => var < p && var != SEX,
                            SplitRule::Categorical { var, left } => var == SEX && left < 4,
                            SplitRule::Time { cut } => bins.is_some_and(|b| cut + 1 < b),
                        };
                        if !ok {
                            return Err(Error::config(alloc::format!(
                                "forest rule {rule:?} does not match the covariates"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Log hazard ratio `r(x)`; for time-varying effects, `r(x, b)` in the
    /// first bin.
    pub fn r(&self, x: &[f64]) -> f64 {
        self.r_in_bin(x, 0)
    }

    fn r_in_bin(&self, x: &[f64], bin: usize) -> f64 {
        match &self.effect {
            Effect::Linear { beta, center } => beta
                .iter()
                .zip(center)
                .zip(x)
                .map(|((b, c), v)| b * (v - c))
                .sum(),
            Effect::Additive { beta, splines } => {
                beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
                    + splines.iter().map(|s| s.eval(x[s.var])).sum::<f64>()
            }
            Effect::Forest {
                forest,
                time_varying,
            } => forest.eval(x, time_varying.then_some(bin)),
        }
    }

    /// Per-bin excess hazards of a piecewise baseline at `x`.
    fn piecewise_hazards(&self, x: &[f64], rates: &[f64]) -> Vec<f64> {
        rates
            .iter()
            .enumerate()
            .map(|(b, l)| l * self.r_in_bin(x, b).exp())
            .collect()
    }

    /// `Λ_E(t | x)`.
    pub fn cumulative_excess_hazard(&self, x: &[f64], t: f64) -> f64 {
        match &self.baseline {
            Baseline::Piecewise { rates, .. } => {
                let grid = self.baseline.grid().expect("validated grid");
                piecewise_cumulative(&grid, &self.piecewise_hazards(x, rates), t)
            }
            Baseline::Weibull { shape, scale } => (t / scale).powf(*shape) * self.r(x).exp(),
        }
    }

    /// `S_E(t | x) = exp(−Λ_E(t | x))`.
    pub fn net_survival(&self, x: &[f64], t: f64) -> f64 {
        (-self.cumulative_excess_hazard(x, t)).exp()
    }

    /// The `t` with `Λ_E(t | x) = target`.
    pub fn inverse_cumulative(&self, x: &[f64], target: f64) -> f64 {
        match &self.baseline {
            Baseline::Piecewise { rates, .. } => {
                let grid = self.baseline.grid().expect("validated grid");
                inverse_cumulative_hazard(&grid, &self.piecewise_hazards(x, rates), target)
            }
            Baseline::Weibull { shape, scale } => {
                scale * (target * (-self.r(x)).exp()).powf(1.0 / shape)
            }
        }
    }
}

/// Population death time after entry at `age`, piecewise exponential over
/// yearly attained-age rates; the last tabulated rate continues beyond the
/// table.
pub fn sample_population_time<R: Rng + ?Sized>(
    table: &LifeTable,
    age: f64,
    keys: &[i64],
    rng: &mut R,
) -> Result<f64> {
    let target = sample_exp(rng, 1.0);
    let mut acc = 0.0;
    let mut a = age;
    loop {
        let year = a.floor() as i64;
        let rate = table.rate(keys, year.min(LIFE_TABLE_MAX_AGE))?;
        let next = if year >= LIFE_TABLE_MAX_AGE {
            f64::INFINITY
        } else {
            (year + 1) as f64
        };
        let seg = next - a;
        if rate > 0.0 && acc + rate * seg >= target {
            return Ok(a + (target - acc) / rate - age);
        }
        if !next.is_finite() {
            return Err(Error::invalid("population hazard vanishes at the oldest age"));
        }
        acc += rate * seg;
        a = next;
    }
}

/// Latent times behind one simulated cohort, and the true log hazard ratio
/// of every subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub r: Vec<f64>,
    pub excess_time: Vec<f64>,
    pub population_time: Vec<f64>,
    pub censor_time: Vec<f64>,
}

/// Draw a cohort of `n` subjects from `mechanism`.
pub fn simulate_replicate(mechanism: &Mechanism, n: usize, seed: u64) -> Result<(Dataset, Truth)> {
    simulate_with(mechanism, n, seed, sample_covariates)
}

/// As [`simulate_replicate`] with a custom covariate sampler.
pub fn simulate_with(
    mechanism: &Mechanism,
    n: usize,
    seed: u64,
    mut covariates: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
) -> Result<(Dataset, Truth)> {
    mechanism.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(n);
    let mut truth = Truth {
        r: Vec::with_capacity(n),
        excess_time: Vec::with_capacity(n),
        population_time: Vec::with_capacity(n),
        censor_time: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x = covariates(&mut rng);
        let age = x[AGE];
        let keys = vec![x[SEX] as i64];
        let t_e = mechanism.inverse_cumulative(&x, sample_exp(&mut rng, 1.0));
        let t_p = sample_population_time(&mechanism.life_table, age, &keys, &mut rng)?;
        let c = mechanism.c_max * (1.0 - rng.random::<f64>());
        let death = t_e.min(t_p);
        let y = death.min(c);
        let delta = death < c;
        let pop = mechanism.life_table.lookup(age, &keys, y)?;
        let mut record = SubjectRecord::new(y, delta, x.clone(), pop);
        record.age = Some(age);
        record.w_keys = keys;
        subjects.push(record);
        truth.r.push(mechanism.r(&x));
        truth.excess_time.push(t_e);
        truth.population_time.push(t_p);
        truth.censor_time.push(c);
    }
    Ok((Dataset::new(subjects, covariate_specs())?, truth))
}

/// Fraction of censored subjects.
pub fn censoring_fraction(dataset: &Dataset) -> f64 {
    let censored = dataset.subjects().iter().filter(|s| !s.delta).count();
    censored as f64 / dataset.len() as f64
}

/// Bisection for the `c_max` giving censoring fraction `target` on one
/// fixed-seed cohort of size `n`; common random numbers make the fraction
/// monotone in `c_max`.
pub fn calibrate_c_max(mechanism: &Mechanism, target: f64, n: usize, seed: u64) -> Result<f64> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::config("target censoring fraction must lie in (0, 1)"));
    }
    let mut m = mechanism.clone();
    let mut frac = |c: f64| -> Result<f64> {
        m.c_max = c;
        Ok(censoring_fraction(&simulate_replicate(&m, n, seed)?.0))
    };
    let (mut lo, mut hi) = (1e-3, 1e3);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if frac(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// `√(Σ_i (truth_i − estimate_i)² / N)`.
pub fn rmse_r(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("RMSE of empty vectors"));
    }
    if truth.len() != estimate.len() {
        return Err(Error::invalid("truth and estimate lengths differ"));
    }
    let sse: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Fraction of truths inside the closed intervals, and the mean length.
pub fn interval_metrics(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != lower.len() || truth.len() != upper.len() {
        return Err(Error::invalid("truth and interval lengths differ"));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no intervals to score"));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::invalid("interval lower bound exceeds upper bound"));
    }
    let n = truth.len() as f64;
    let covered = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    let length = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| if l == u { 0.0 } else { u - l })
        .sum::<f64>()
        / n;
    Ok((covered as f64 / n, length))
}

/// One scored estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub subject: usize,
    /// Evaluation time for net-survival targets; absent for `r(x)`.
    pub time: Option<f64>,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub model: String,
    pub points: Vec<ScoredPoint>,
    pub rmse: f64,
    pub coverage: f64,
    pub length: f64,
}

/// Scores grouped by evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScore {
    pub time: Option<f64>,
    pub rmse: f64,
    pub coverage: f64,
    pub length: f64,
}

fn score(points: &[ScoredPoint]) -> Result<(f64, f64, f64)> {
    let truth: Vec<f64> = points.iter().map(|p| p.truth).collect();
    let est: Vec<f64> = points.iter().map(|p| p.estimate).collect();
    let lo: Vec<f64> = points.iter().map(|p| p.lower).collect();
    let hi: Vec<f64> = points.iter().map(|p| p.upper).collect();
    let rmse = rmse_r(&truth, &est)?;
    let (coverage, length) = interval_metrics(&truth, &lo, &hi)?;
    Ok((rmse, coverage, length))
}

impl ReplicateResult {
    pub fn from_points(replicate: usize, model: impl Into<String>, points: Vec<ScoredPoint>) -> Result<Self> {
        let (rmse, coverage, length) = score(&points)?;
        Ok(Self {
            replicate,
            model: model.into(),
            points,
            rmse,
            coverage,
            length,
        })
    }

    /// RMSE, coverage and length at each evaluation time, in order of
    /// first appearance.
    pub fn by_time(&self) -> Result<Vec<TimeScore>> {
        let mut times: Vec<Option<f64>> = Vec::new();
        for p in &self.points {
            if !times.contains(&p.time) {
                times.push(p.time);
            }
        }
        times
            .into_iter()
            .map(|time| {
                let pts: Vec<ScoredPoint> =
                    self.points.iter().copied().filter(|p| p.time == time).collect();
                let (rmse, coverage, length) = score(&pts)?;
                Ok(TimeScore {
                    time,
                    rmse,
                    coverage,
                    length,
                })
            })
            .collect()
    }
}

/// `v` minus its mean.
pub fn centred(v: &[f64]) -> Vec<f64> {
    let m = mean(v);
    v.iter().map(|x| x - m).collect()
}

fn summarise_column(column: &mut [f64], level: f64) -> (f64, f64, f64) {
    let est = mean(column);
    sort_f64(column);
    let tail = (1.0 - level) / 2.0;
    (est, quantile_sorted(column, tail), quantile_sorted(column, 1.0 - tail))
}

/// Score `r(x_i)` draws against the truth. Both are centred over the
/// cohort, since the baseline absorbs any additive constant in `r`.
pub fn score_r(draws: &PosteriorDraws, dataset: &Dataset, truth_r: &[f64], level: f64) -> Result<Vec<ScoredPoint>> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    if truth_r.len() != dataset.len() {
        return Err(Error::invalid("truth does not match the dataset"));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .draws
        .iter()
        .map(|d| {
            let r: Vec<f64> = dataset.subjects().iter().map(|s| d.r(&s.x, None)).collect();
            centred(&r)
        })
        .collect();
    let truth = centred(truth_r);
    let mut column = vec![0.0; per_draw.len()];
    Ok((0..dataset.len())
        .map(|i| {
            for (c, d) in column.iter_mut().zip(&per_draw) {
                *c = d[i];
            }
            let (estimate, lower, upper) = summarise_column(&mut column, level);
            ScoredPoint {
                subject: i,
                time: None,
                truth: truth[i],
                estimate,
                lower,
                upper,
            }
        })
        .collect())
}

/// Score `S_E(t | x_i)` draws against the mechanism at each time.
pub fn score_net_survival(
    draws: &PosteriorDraws,
    dataset: &Dataset,
    mechanism: &Mechanism,
    times: &[f64],
    level: f64,
) -> Result<Vec<ScoredPoint>> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let mut points = Vec::with_capacity(dataset.len() * times.len());
    let mut curves = vec![vec![0.0; times.len()]; draws.len()];
    let mut column = vec![0.0; draws.len()];
    for (i, s) in dataset.subjects().iter().enumerate() {
        for (curve, d) in curves.iter_mut().zip(&draws.draws) {
            let h = bin_hazards(d, draws.mode, &draws.grid, &s.x);
            for (c, &t) in curve.iter_mut().zip(times) {
                *c = (-piecewise_cumulative(&draws.grid, &h, t)).exp();
            }
        }
        for (k, &t) in times.iter().enumerate() {
            for (c, curve) in column.iter_mut().zip(&curves) {
                *c = curve[k];
            }
            let (estimate, lower, upper) = summarise_column(&mut column, level);
            points.push(ScoredPoint {
                subject: i,
                time: Some(t),
                truth: mechanism.net_survival(&s.x, t),
                estimate,
                lower,
                upper,
            });
        }
    }
    Ok(points)
}

/// Least-squares fitted values of `target` on an intercept, the numeric
/// covariates and dummy indicators for categorical levels.
pub fn linear_projection(dataset: &Dataset, target: &[f64]) -> Result<Vec<f64>> {
    if target.len() != dataset.len() {
        return Err(Error::invalid("target does not match the dataset"));
    }
    let rows: Vec<Vec<f64>> = dataset
        .subjects()
        .iter()
        .map(|s| {
            let mut row = vec![1.0];
            for (v, spec) in s.x.iter().zip(dataset.covariates()) {
                match spec.kind {
                    crate::data::CovariateKind::Numeric => row.push(*v),
                    crate::data::CovariateKind::Categorical { levels } => {
                        row.extend((1..levels).map(|l| if *v as u32 == l { 1.0 } else { 0.0 }));
                    }
                }
            }
            row
        })
        .collect();
    let k = rows[0].len();
    let mut xtx = SquareMatrix::zeros(k);
    let mut xty = vec![0.0; k];
    for (row, y) in rows.iter().zip(target) {
        for a in 0..k {
            xty[a] += row[a] * y;
            for b in 0..k {
                xtx.add(a, b, row[a] * row[b]);
            }
        }
    }
    // A vanishing ridge keeps rank-deficient designs solvable.
    for a in 0..k {
        xtx.add(a, a, 1e-10 * (1.0 + xtx.get(a, a)));
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::invalid("singular least-squares design"))?;
    let coef = chol.solve(&xty);
    Ok(rows
        .iter()
        .map(|row| row.iter().zip(&coef).map(|(a, b)| a * b).sum())
        .collect())
}

/// Replicate-averaged scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub replicates: usize,
    pub rmse: f64,
    pub coverage: f64,
    pub length: f64,
}

/// One row per model, in order of first appearance.
pub fn aggregate(results: &[ReplicateResult]) -> Vec<AggregateRow> {
    let mut models: Vec<&str> = Vec::new();
    for r in results {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    models
        .into_iter()
        .map(|model| {
            let rs: Vec<&ReplicateResult> = results.iter().filter(|r| r.model == model).collect();
            let avg = |f: fn(&ReplicateResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            AggregateRow {
                model: model.to_string(),
                replicates: rs.len(),
                rmse: avg(|r| r.rmse),
                coverage: avg(|r| r.coverage),
                length: avg(|r| r.length),
            }
        })
        .collect()
}

/// Per-subject averages over replicates of one model: signed error,
/// coverage indicator and interval length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectAggregate {
    pub subject: usize,
    pub time: Option<f64>,
    pub error: f64,
    pub coverage: f64,
    pub length: f64,
}

pub fn subject_aggregates(results: &[ReplicateResult], model: &str) -> Vec<SubjectAggregate> {
    let rs: Vec<&ReplicateResult> = results.iter().filter(|r| r.model == model).collect();
    let Some(first) = rs.first() else {
        return Vec::new();
    };
    let n = rs.len() as f64;
    (0..first.points.len())
        .map(|k| {
            let mut out = SubjectAggregate {
                subject: first.points[k].subject,
                time: first.points[k].time,
                error: 0.0,
                coverage: 0.0,
                length: 0.0,
            };
            for r in &rs {
                if let Some(p) = r.points.get(k) {
                    out.error += (p.estimate - p.truth) / n;
                    out.coverage += f64::from(u8::from(p.lower <= p.truth && p.truth <= p.upper)) / n;
                    out.length += (p.upper - p.lower) / n;
                }
            }
            out
        })
        .collect()
}
