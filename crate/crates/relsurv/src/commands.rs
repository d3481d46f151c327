//! The `fit`, `predict`, `summarize`, `compare` and `simulate` commands.

use std::path::{Path, PathBuf};

use relsurv_core::estimands::{elpd_loo, net_survival_draws, Elpd, SurvivalCurve};
use relsurv_core::forest::MoveKind;
use relsurv_core::sampler::{run, PosteriorDraws};
use relsurv_core::stats::{quantile_sorted, sort_f64, summarize as summarise_values, variance};
use relsurv_core::summaries::{
    cart_importance, fit_virtual_twins, loo_variable_importance, partial_effect, summary_targets,
    CartConfig, PartialEffect, ProjectionConfig, ProjectionDesign, RegressionTree,
    VariableImportance,
};
use relsurv_core::{CovariateKind, Dataset, Mode, SubjectRecord, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Schema};
use crate::error::{AppError, AppResult};
use crate::io::{self, FitMeta};
use crate::study::{run_study, StudyConfig, StudyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRates {
    pub birth: f64,
    pub death: f64,
    pub change: f64,
    pub swap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub chain: usize,
    pub seed: u64,
    pub retained: usize,
    pub acceptance: MoveRates,
    pub omega: Option<OmegaSummary>,
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: Mode,
    pub subjects: usize,
    pub events: usize,
    pub grid: Vec<f64>,
    pub chains: Vec<ChainReport>,
}

fn chain_report(chain: usize, draws: &PosteriorDraws) -> ChainReport {
    let m = &draws.diagnostics.moves;
    let omegas: Vec<f64> = draws.draws.iter().filter_map(|d| d.omega).collect();
    let omega = (draws.mode == Mode::Nph && !omegas.is_empty()).then(|| {
        let (mean, lower, upper) = summarise_values(&omegas, 0.9);
        let d = &draws.diagnostics;
        OmegaSummary {
            mean,
            lower,
            upper,
            acceptance: if d.omega_proposed == 0 {
                0.0
            } else {
                d.omega_accepted as f64 / d.omega_proposed as f64
            },
        }
    });
    ChainReport {
        chain: chain + 1,
        seed: draws.config.seed,
        retained: draws.len(),
        acceptance: MoveRates {
            birth: m.rate(MoveKind::Birth),
            death: m.rate(MoveKind::Death),
            change: m.rate(MoveKind::Change),
            swap: m.rate(MoveKind::Swap),
        },
        omega,
        loglik_trace: draws.diagnostics.loglik_trace.clone(),
    }
}

/// Load the cohort named by a run configuration.
pub fn load_cohort(config: &RunConfig) -> AppResult<Dataset> {
    let schema = config.schema();
    let table = match &config.life_table {
        Some(p) => Some(io::read_life_table(p, &schema)?),
        None => None,
    };
    io::read_cohort(&config.data, &schema, table.as_ref())
}

pub fn time_grid(config: &RunConfig, dataset: &Dataset) -> AppResult<TimeGrid> {
    if let Some(cuts) = &config.cuts {
        return Ok(TimeGrid::new(cuts.clone())?);
    }
    let bins = config.bins.unwrap_or_else(|| TimeGrid::default_bins(dataset.len()));
    Ok(TimeGrid::from_quantiles(&dataset.event_times(), bins)?)
}

/// Fit every chain of `config` and write the draws directory: the config
/// echo first, then metadata, chains and the fit report.
pub fn fit(config: &RunConfig) -> AppResult<FitReport> {
    config.validate()?;
    let out = &config.output;
    io::create_dir(out)?;
    io::write_text(&out.join(io::CONFIG_ECHO), &config.to_toml())?;
    let dataset = load_cohort(config)?;
    let grid = time_grid(config, &dataset)?;
    let meta = FitMeta {
        fingerprint: io::fingerprint(&dataset),
        schema: config.schema(),
        subjects: dataset.len(),
        chains: config.chains,
    };
    io::write_json_pretty(&out.join(io::META_FILE), &meta)?;
    let samplers = (0..config.chains)
        .map(|c| config.sampler(c))
        .collect::<AppResult<Vec<_>>>()?;
    let results: Vec<AppResult<ChainReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = samplers
            .iter()
            .enumerate()
            .map(|(c, sampler)| {
                let (dataset, grid) = (&dataset, &grid);
                s.spawn(move || -> AppResult<ChainReport> {
                    let draws = run(dataset, grid, sampler)?;
                    io::write_json(&io::chain_file(out, c), &draws)?;
                    Ok(chain_report(c, &draws))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain worker panicked")).collect()
    });
    let report = FitReport {
        mode: config.mode,
        subjects: dataset.len(),
        events: dataset.subjects().iter().filter(|s| s.delta).count(),
        grid: grid.cuts().to_vec(),
        chains: results.into_iter().collect::<AppResult<Vec<_>>>()?,
    };
    io::write_json_pretty(&out.join(io::REPORT_FILE), &report)?;
    Ok(report)
}

/// Net-survival predictions: one curve per row and the average over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subjects: Vec<SurvivalCurve>,
    pub population: SurvivalCurve,
}

pub fn parse_filter(filter: &str) -> AppResult<(&str, &str)> {
    filter
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| AppError::input(format!("filter `{filter}` must look like column=value")))
}

pub fn predict(
    draws_dir: &Path,
    data: &Path,
    times: &[f64],
    filter: Option<&str>,
    level: f64,
    out: Option<&Path>,
) -> AppResult<Prediction> {
    let (meta, draws) = io::load_fit(draws_dir)?;
    let filter = filter.map(parse_filter).transpose()?;
    let rows = io::read_covariates(data, &meta.schema, filter)?;
    if rows.is_empty() {
        return Err(AppError::input("the filter matches no rows"));
    }
    let per_row = rows
        .iter()
        .map(|x| net_survival_draws(&draws, x, times))
        .collect::<relsurv_core::Result<Vec<_>>>()?;
    let subjects = per_row
        .iter()
        .map(|c| SurvivalCurve::from_draws(times, c, level))
        .collect::<relsurv_core::Result<Vec<_>>>()?;
    let averaged: Vec<Vec<f64>> = (0..draws.len())
        .map(|d| {
            (0..times.len())
                .map(|k| per_row.iter().map(|c| c[d][k]).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect();
    let population = SurvivalCurve::from_draws(times, &averaged, level)?;
    if let Some(path) = out {
        let mut table = Vec::new();
        let mut push = |who: String, c: &SurvivalCurve| {
            for k in 0..c.times.len() {
                table.push(vec![
                    who.clone(),
                    c.times[k].to_string(),
                    c.mean[k].to_string(),
                    c.lower[k].to_string(),
                    c.upper[k].to_string(),
                ]);
            }
        };
        for (i, c) in subjects.iter().enumerate() {
            push((i + 1).to_string(), c);
        }
        push("all".into(), &population);
        io::write_table(path, &["subject", "time", "mean", "lower", "upper"], &table)?;
    }
    Ok(Prediction { subjects, population })
}

/// Summaries of one target: `r(x)` (no time) or `S_E(t | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySet {
    pub time: Option<f64>,
    pub importance: VariableImportance,
    pub partial_effects: Vec<PartialEffect>,
    pub tree: RegressionTree,
    pub cart_importance: Vec<f64>,
}

/// A cohort carrying only covariates; summaries never read outcomes.
fn covariate_dataset(rows: Vec<Vec<f64>>, schema: &Schema) -> AppResult<Dataset> {
    let subjects = rows.into_iter().map(|x| SubjectRecord::new(0.0, false, x, 0.0)).collect();
    Ok(Dataset::new(subjects, io::covariate_specs(&schema.covariates))?)
}

/// Keep at most `max` draws, evenly spaced.
pub fn thin_draws(draws: &PosteriorDraws, max: usize) -> PosteriorDraws {
    let mut out = draws.clone();
    if max > 0 && draws.len() > max {
        out.draws = (0..max).map(|k| draws.draws[k * draws.len() / max].clone()).collect();
    }
    out
}

/// Partial-effect grid: 20 quantiles (2.5%–97.5%) of a numeric covariate,
/// or all levels of a categorical one.
fn effect_grid(dataset: &Dataset, var: usize) -> Vec<f64> {
    match dataset.covariates()[var].kind {
        CovariateKind::Categorical { levels } => (0..levels).map(f64::from).collect(),
        CovariateKind::Numeric => {
            let mut v: Vec<f64> = dataset.subjects().iter().map(|s| s.x[var]).collect();
            sort_f64(&mut v);
            let mut g: Vec<f64> = (0..20).map(|k| quantile_sorted(&v, 0.025 + 0.95 * k as f64 / 19.0)).collect();
            g.dedup();
            g
        }
    }
}

pub struct SummarizeOptions<'a> {
    pub times: &'a [f64],
    pub variables: &'a [String],
    pub max_draws: usize,
    pub level: f64,
    pub out: Option<&'a Path>,
}

pub fn summarize(draws_dir: &Path, data: &Path, opts: &SummarizeOptions) -> AppResult<Vec<SummarySet>> {
    let (meta, draws) = io::load_fit(draws_dir)?;
    let names: Vec<&str> = meta.schema.covariates.iter().map(|c| c.name.as_str()).collect();
    let vars = opts
        .variables
        .iter()
        .map(|v| {
            names.iter().position(|n| n == v).ok_or_else(|| {
                AppError::input(format!("unknown variable `{v}`; covariates are {}", names.join(", ")))
            })
        })
        .collect::<AppResult<Vec<usize>>>()?;
    if draws.mode == Mode::Nph && opts.times.is_empty() {
        return Err(AppError::input("non-proportional fits need --times for summaries"));
    }
    let dataset = covariate_dataset(io::read_covariates(data, &meta.schema, None)?, &meta.schema)?;
    let draws = thin_draws(&draws, opts.max_draws);
    let design = ProjectionDesign::from_dataset(&dataset, ProjectionConfig::default());
    let times: Vec<Option<f64>> = if opts.times.is_empty() {
        vec![None]
    } else {
        opts.times.iter().copied().map(Some).collect()
    };
    let mut sets = Vec::new();
    for t in times {
        let targets = summary_targets(&draws, &dataset, t)?;
        let importance = loo_variable_importance(&design, &targets)?;
        let partial_effects = vars
            .iter()
            .map(|&v| partial_effect(&draws, &dataset, v, &effect_grid(&dataset, v), t, opts.level))
            .collect::<relsurv_core::Result<Vec<_>>>()?;
        let tree = fit_virtual_twins(&targets, &dataset, &CartConfig::default())?;
        let cart_importance = cart_importance(&tree, dataset.num_covariates());
        sets.push(SummarySet {
            time: t,
            importance,
            partial_effects,
            tree,
            cart_importance,
        });
    }
    if let Some(out) = opts.out {
        write_summaries(out, &names, &sets)?;
    }
    Ok(sets)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_summaries(out: &Path, names: &[&str], sets: &[SummarySet]) -> AppResult<()> {
    for set in sets {
        let dir = match set.time {
            None => out.to_path_buf(),
            Some(t) => out.join(format!("t_{t}")),
        };
        io::create_dir(&dir)?;
        let mut header = vec!["draw".to_string(), "full".into()];
        header.extend(names.iter().map(|n| format!("without_{n}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..set.importance.full.len())
            .map(|s| {
                let mut r = vec![(s + 1).to_string(), opt(set.importance.full[s])];
                r.extend(set.importance.dropped.iter().map(|d| opt(d[s])));
                r
            })
            .collect();
        io::write_table(&dir.join("r2.csv"), &header, &rows)?;
        for pe in &set.partial_effects {
            let rows: Vec<Vec<String>> = (0..pe.values.len())
                .map(|k| {
                    vec![
                        pe.values[k].to_string(),
                        pe.mean[k].to_string(),
                        pe.lower[k].to_string(),
                        pe.upper[k].to_string(),
                        pe.extrapolated[k].to_string(),
                    ]
                })
                .collect();
            io::write_table(
                &dir.join(format!("partial_{}.csv", names[pe.variable])),
                &["value", "mean", "lower", "upper", "extrapolated"],
                &rows,
            )?;
        }
        io::write_json_pretty(&dir.join("tree.json"), &set.tree)?;
        let rows: Vec<Vec<String>> = names
            .iter()
            .zip(&set.cart_importance)
            .map(|(n, v)| vec![n.to_string(), v.to_string()])
            .collect();
        io::write_table(&dir.join("cart_importance.csv"), &["variable", "importance"], &rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelElpd {
    pub model: String,
    pub elpd: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdDifference {
    pub first: String,
    pub second: String,
    /// `elpd(first) − elpd(second)`.
    pub difference: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<ModelElpd>,
    pub differences: Vec<ElpdDifference>,
}

/// ELPD-LOO of each fit and every pairwise difference; all fits must share
/// a dataset fingerprint.
pub fn compare(dirs: &[PathBuf], out: Option<&Path>) -> AppResult<Comparison> {
    if dirs.is_empty() {
        return Err(AppError::input("no draws directories to compare"));
    }
    let mut fits: Vec<(String, String, Elpd)> = Vec::new();
    for d in dirs {
        let (meta, draws) = io::load_fit(d)?;
        if let Some((first, fp, _)) = fits.first() {
            if *fp != meta.fingerprint {
                return Err(AppError::input(format!(
                    "{} and {} were fit on different datasets (fingerprints {fp} and {}); ELPD values are not comparable",
                    first,
                    d.display(),
                    meta.fingerprint
                )));
            }
        }
        fits.push((d.display().to_string(), meta.fingerprint, elpd_loo(&draws.loglik_matrix())?));
    }
    let models = fits
        .iter()
        .map(|(m, _, e)| ModelElpd {
            model: m.clone(),
            elpd: e.elpd,
            se: e.se,
        })
        .collect();
    let mut differences = Vec::new();
    for a in 0..fits.len() {
        for b in a + 1..fits.len() {
            let diff: Vec<f64> = fits[a].2.per_obs.iter().zip(&fits[b].2.per_obs).map(|(x, y)| x - y).collect();
            differences.push(ElpdDifference {
                first: fits[a].0.clone(),
                second: fits[b].0.clone(),
                difference: diff.iter().sum(),
                se: (diff.len() as f64 * variance(&diff)).sqrt(),
            });
        }
    }
    let cmp = Comparison { models, differences };
    if let Some(path) = out {
        let mut rows: Vec<Vec<String>> = cmp
            .models
            .iter()
            .map(|m| vec![m.model.clone(), String::new(), m.elpd.to_string(), m.se.to_string()])
            .collect();
        rows.extend(
            cmp.differences
                .iter()
                .map(|d| vec![d.first.clone(), d.second.clone(), d.difference.to_string(), d.se.to_string()]),
        );
        io::write_table(path, &["model", "versus", "elpd", "se"], &rows)?;
    }
    Ok(cmp)
}

pub fn simulate(config: &StudyConfig) -> AppResult<StudyReport> {
    run_study(config, true)
}
