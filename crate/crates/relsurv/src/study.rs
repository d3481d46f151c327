//! Simulation studies: simulate cohorts, fit, score, tabulate.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use relsurv_core::estimands::{elpd_loo, survival_violations};
use relsurv_core::sampler::{run, Mode, SamplerConfig};
use relsurv_core::simgen::{
    aggregate, censoring_fraction, centred, score_net_survival, score_r, simulate_replicate,
    subject_aggregates, AggregateRow, Mechanism, MechanismKind, ReplicateResult, ScoredPoint,
    Truth, DEFAULT_C_MAX,
};
use relsurv_core::{Dataset, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::config::split_seed;
use crate::error::{AppError, AppResult};
use crate::io;

/// Estimates produced outside this crate, scored alongside the fitted
/// models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEstimates {
    pub model: String,
    /// CSV with columns `replicate`, `subject`, `estimate` and optionally
    /// `time`, `lower`, `upper`. Replicates and subjects count from 1, as in
    /// the study tables.
    pub path: PathBuf,
}

fn d_replicates() -> usize {
    100
}
fn d_n() -> usize {
    1043
}
fn d_models() -> Vec<Mode> {
    vec![Mode::Ph]
}
fn d_trees() -> usize {
    50
}
fn d_iterations() -> usize {
    2000
}
fn d_burn() -> usize {
    500
}
fn d_thin() -> usize {
    3
}
fn d_level() -> f64 {
    0.9
}
fn d_seed() -> u64 {
    1
}
fn d_output() -> PathBuf {
    PathBuf::from("relsurv-study")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub mechanism: String,
    #[serde(default = "d_replicates")]
    pub replicates: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Censoring bound; the calibrated default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
    #[serde(default = "d_models")]
    pub models: Vec<Mode>,
    #[serde(default = "d_trees")]
    pub num_trees: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_burn")]
    pub burn_in: usize,
    #[serde(default = "d_thin")]
    pub thin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default = "d_level")]
    pub level: f64,
    /// Net-survival evaluation times. Without them, proportional truths
    /// fitted only by PH models are scored on `r(x)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "d_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub keep_data: bool,
    #[serde(default)]
    pub external: Vec<ExternalEstimates>,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// The scored quantity of a study.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Cohort-centred `r(x_i)`.
    LogHazardRatio,
    NetSurvival(Vec<f64>),
}

/// Ten evenly spaced times up to four years.
pub fn default_times() -> Vec<f64> {
    (1..=10).map(|k| 0.4 * k as f64).collect()
}

impl StudyConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut c: StudyConfig = toml::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.output = base.join(&c.output);
        for e in &mut c.external {
            e.path = base.join(&e.path);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn mechanism(&self) -> AppResult<Mechanism> {
        let kind = MechanismKind::from_name(&self.mechanism)?;
        let mut m = Mechanism::default_for(kind);
        m.c_max = self.c_max.unwrap_or(DEFAULT_C_MAX);
        m.validate()?;
        Ok(m)
    }

    pub fn target(&self) -> AppResult<Target> {
        let kind = MechanismKind::from_name(&self.mechanism)?;
        Ok(match &self.times {
            Some(t) => Target::NetSurvival(t.clone()),
            None if kind.is_proportional() && self.models.iter().all(|m| *m == Mode::Ph) => {
                Target::LogHazardRatio
            }
            None => Target::NetSurvival(default_times()),
        })
    }

    pub fn sampler(&self, mode: Mode, seed: u64) -> SamplerConfig {
        SamplerConfig {
            mode,
            num_trees: self.num_trees,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        self.mechanism()?;
        if self.replicates == 0 || self.n == 0 {
            return Err(AppError::input("replicates and n must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(AppError::input("level must lie in (0, 1)"));
        }
        if self.threads == Some(0) {
            return Err(AppError::input("threads must be at least 1"));
        }
        for mode in &self.models {
            self.sampler(*mode, 0).validate()?;
        }
        if let Some(t) = &self.times {
            if t.is_empty() || t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(AppError::input("times must be non-empty, finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Data seed of replicate `m`.
    pub fn data_seed(&self, m: usize) -> u64 {
        split_seed(self.seed, 2 * m as u64)
    }

    /// Sampler seed of replicate `m`.
    pub fn fit_seed(&self, m: usize) -> u64 {
        split_seed(self.seed, 2 * m as u64 + 1)
    }

    /// The simulated cohort of replicate `m`.
    pub fn replicate_data(&self, m: usize) -> AppResult<(Dataset, Truth)> {
        Ok(simulate_replicate(&self.mechanism()?, self.n, self.data_seed(m))?)
    }
}

/// Per-replicate, per-model row of the study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub model: String,
    pub rmse: f64,
    pub coverage: f64,
    pub length: f64,
    pub elpd: Option<f64>,
    pub elpd_se: Option<f64>,
    pub censored: f64,
    /// Non-monotone or improper net-survival curves over retained draws.
    pub violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<ReplicateRow>,
    pub results: Vec<ReplicateResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl StudyReport {
    pub fn row(&self, replicate: usize, model: &str) -> Option<&ReplicateRow> {
        self.rows.iter().find(|r| r.replicate == replicate && r.model == model)
    }
}

pub fn model_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Ph => "coxph_bart",
        Mode::Nph => "coxnph_bart",
    }
}

/// Truth at every scored point: centred `r(x_i)` or `S_E(t | x_i)`.
pub fn truth_points(mechanism: &Mechanism, dataset: &Dataset, truth: &Truth, target: &Target) -> Vec<(usize, Option<f64>, f64)> {
    match target {
        Target::LogHazardRatio => centred(&truth.r)
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i, None, r))
            .collect(),
        Target::NetSurvival(times) => dataset
            .subjects()
            .iter()
            .enumerate()
            .flat_map(|(i, s)| times.iter().map(move |&t| (i, Some(t), mechanism.net_survival(&s.x, t))))
            .collect(),
    }
}

fn grid_for(dataset: &Dataset, bins: Option<usize>) -> AppResult<TimeGrid> {
    let b = bins.unwrap_or_else(|| TimeGrid::default_bins(dataset.len()));
    Ok(TimeGrid::from_quantiles(&dataset.event_times(), b)?)
}

fn run_replicate(config: &StudyConfig, mechanism: &Mechanism, target: &Target, m: usize) -> AppResult<Vec<ScoredRow>> {
    let (data, truth) = simulate_replicate(mechanism, config.n, config.data_seed(m))?;
    if config.keep_data {
        let labels = vec![None, Some(vec!["female".to_string(), "male".to_string()]), None, None];
        io::write_cohort(&config.output.join("data").join(format!("replicate_{}.csv", m + 1)), &data, &labels)?;
        io::write_json(&config.output.join("truth").join(format!("replicate_{}.json", m + 1)), &truth)?;
    }
    let grid = grid_for(&data, config.bins)?;
    let rows: Vec<Vec<f64>> = data.subjects().iter().map(|s| s.x.clone()).collect();
    let mut check_times = match target {
        Target::NetSurvival(t) => t.clone(),
        Target::LogHazardRatio => Vec::new(),
    };
    check_times.extend_from_slice(grid.cuts());
    check_times.extend(default_times());
    relsurv_core::stats::sort_f64(&mut check_times);
    let mut out = Vec::new();
    for &mode in &config.models {
        let draws = run(&data, &grid, &config.sampler(mode, config.fit_seed(m)))?;
        let points = match target {
            Target::LogHazardRatio => score_r(&draws, &data, &truth.r, config.level)?,
            Target::NetSurvival(times) => score_net_survival(&draws, &data, mechanism, times, config.level)?,
        };
        let result = ReplicateResult::from_points(m, model_name(mode), points)?;
        let elpd = elpd_loo(&draws.loglik_matrix()).ok();
        let row = ReplicateRow {
            replicate: m,
            model: model_name(mode).into(),
            rmse: result.rmse,
            coverage: result.coverage,
            length: result.length,
            elpd: elpd.as_ref().map(|e| e.elpd),
            elpd_se: elpd.as_ref().map(|e| e.se),
            censored: censoring_fraction(&data),
            violations: Some(survival_violations(&draws, &rows, &check_times)?),
        };
        out.push((row, result));
    }
    Ok(out)
}

/// A report row with the scored points behind it.
type ScoredRow = (ReplicateRow, ReplicateResult);
/// Replicate, subject and time bits of one external estimate.
type EstimateKey = (usize, usize, Option<u64>);

/// Score an external estimate file against the study's truths.
pub fn score_external(config: &StudyConfig, external: &ExternalEstimates) -> AppResult<Vec<ScoredRow>> {
    let mechanism = config.mechanism()?;
    let target = config.target()?;
    let records = io::read_records(&external.path)?;
    let path = &external.path;
    let field = |r: &HashMap<String, String>, k: &str| -> AppResult<Option<f64>> {
        match r.get(k).map(String::as_str) {
            None | Some("") => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| AppError::format(path, format!("column `{k}`: `{v}` is not a number"))),
        }
    };
    // (replicate, subject, time bits) → (estimate, lower, upper)
    let mut by_key: HashMap<EstimateKey, (f64, f64, f64)> = HashMap::new();
    for r in &records {
        let index = |k: &str| -> AppResult<usize> {
            match field(r, k)? {
                Some(v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize - 1),
                Some(v) => Err(AppError::format(path, format!("column `{k}`: {v} is not a positive integer"))),
                None => Err(AppError::format(path, format!("missing {k}"))),
            }
        };
        let rep = index("replicate")?;
        let subject = index("subject")?;
        let estimate = field(r, "estimate")?.ok_or_else(|| AppError::format(path, "missing estimate"))?;
        let time = field(r, "time")?.map(f64::to_bits);
        let lower = field(r, "lower")?.unwrap_or(estimate);
        let upper = field(r, "upper")?.unwrap_or(estimate);
        by_key.insert((rep, subject, time), (estimate, lower, upper));
    }
    let mut out = Vec::new();
    for m in 0..config.replicates {
        let (data, truth) = config.replicate_data(m)?;
        let truths = truth_points(&mechanism, &data, &truth, &target);
        let mut est = Vec::with_capacity(truths.len());
        for &(i, t, _) in &truths {
            let v = by_key.get(&(m, i, t.map(f64::to_bits))).ok_or_else(|| {
                AppError::format(path, format!("no estimate for replicate {}, subject {}, time {t:?}", m + 1, i + 1))
            })?;
            est.push(*v);
        }
        if target == Target::LogHazardRatio {
            // External log hazard ratios carry their own intercept.
            let shift = est.iter().map(|e| e.0).sum::<f64>() / est.len() as f64;
            for e in &mut est {
                *e = (e.0 - shift, e.1 - shift, e.2 - shift);
            }
        }
        let points: Vec<ScoredPoint> = truths
            .iter()
            .zip(&est)
            .map(|(&(subject, time, truth), &(estimate, lower, upper))| ScoredPoint {
                subject,
                time,
                truth,
                estimate,
                lower,
                upper,
            })
            .collect();
        let result = ReplicateResult::from_points(m, external.model.clone(), points)?;
        out.push((
            ReplicateRow {
                replicate: m,
                model: external.model.clone(),
                rmse: result.rmse,
                coverage: result.coverage,
                length: result.length,
                elpd: None,
                elpd_se: None,
                censored: censoring_fraction(&data),
                violations: None,
            },
            result,
        ));
    }
    Ok(out)
}

/// Run every replicate (in parallel), score external estimates and build
/// the report. Output files are written when `write` is set.
pub fn run_study(config: &StudyConfig, write: bool) -> AppResult<StudyReport> {
    config.validate()?;
    let mechanism = config.mechanism()?;
    let target = config.target()?;
    if write || config.keep_data {
        io::create_dir(&config.output)?;
        io::write_text(&config.output.join("study_config.toml"), &toml::to_string(config).expect("serialisable"))?;
    }
    if config.keep_data {
        io::create_dir(&config.output.join("data"))?;
        io::create_dir(&config.output.join("truth"))?;
    }
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .min(config.replicates);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<AppResult<Vec<ScoredRow>>>>> =
        Mutex::new((0..config.replicates).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let m = next.fetch_add(1, Ordering::SeqCst);
                if m >= config.replicates {
                    break;
                }
                let r = run_replicate(config, &mechanism, &target, m);
                slots.lock().expect("no poisoned workers")[m] = Some(r);
            });
        }
    });
    let mut pairs = Vec::new();
    for slot in slots.into_inner().expect("no poisoned workers") {
        pairs.extend(slot.expect("every replicate ran")?);
    }
    for e in &config.external {
        pairs.extend(score_external(config, e)?);
    }
    let (rows, results): (Vec<ReplicateRow>, Vec<ReplicateResult>) = pairs.into_iter().unzip();
    let report = StudyReport {
        aggregate: aggregate(&results),
        rows,
        results,
    };
    if write {
        write_report(config, &report)?;
    }
    Ok(report)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

pub fn write_report(config: &StudyConfig, report: &StudyReport) -> AppResult<()> {
    let dir = &config.output;
    io::write_table(
        &dir.join("replicates.csv"),
        &["replicate", "model", "rmse", "coverage", "length", "elpd", "elpd_se", "censored", "violations"],
        &report
            .rows
            .iter()
            .map(|r| {
                vec![
                    (r.replicate + 1).to_string(),
                    r.model.clone(),
                    r.rmse.to_string(),
                    r.coverage.to_string(),
                    r.length.to_string(),
                    opt(&r.elpd),
                    opt(&r.elpd_se),
                    r.censored.to_string(),
                    opt(&r.violations),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    io::write_table(
        &dir.join("aggregate.csv"),
        &["model", "replicates", "avg_rmse", "avg_coverage", "avg_length"],
        &report
            .aggregate
            .iter()
            .map(|a| {
                vec![
                    a.model.clone(),
                    a.replicates.to_string(),
                    a.rmse.to_string(),
                    a.coverage.to_string(),
                    a.length.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let mut subject_rows = Vec::new();
    for a in &report.aggregate {
        for s in subject_aggregates(&report.results, &a.model) {
            subject_rows.push(vec![
                a.model.clone(),
                (s.subject + 1).to_string(),
                opt(&s.time),
                s.error.to_string(),
                s.coverage.to_string(),
                s.length.to_string(),
            ]);
        }
    }
    io::write_table(
        &dir.join("subjects.csv"),
        &["model", "subject", "time", "avg_error", "coverage", "avg_length"],
        &subject_rows,
    )?;
    let mut time_rows = Vec::new();
    for r in &report.results {
        for t in r.by_time()? {
            time_rows.push(vec![
                (r.replicate + 1).to_string(),
                r.model.clone(),
                opt(&t.time),
                t.rmse.to_string(),
                t.coverage.to_string(),
                t.length.to_string(),
            ]);
        }
    }
    io::write_table(
        &dir.join("by_time.csv"),
        &["replicate", "model", "time", "rmse", "coverage", "length"],
        &time_rows,
    )
}
