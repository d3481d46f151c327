//! Generators for the synthetic datasets shipped in `data/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relsurv_core::estimands::inverse_cumulative_hazard;
use relsurv_core::simgen::{
    sample_population_time, simulate_replicate, Mechanism, MechanismKind,
};
use relsurv_core::stats::{sample_exp, sample_normal};
use relsurv_core::{CovariateSpec, Dataset, LifeTable, SubjectRecord, TimeGrid};

use crate::error::AppResult;

pub const STAGE_LEVELS: [&str; 4] = ["1", "2", "3", "4"];
pub const DEP_LEVELS: [&str; 5] = ["1", "2", "3", "4", "5"];
pub const YES_NO: [&str; 2] = ["no", "yes"];
const COLON_CUTS: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
const COLON_RATES: [f64; 6] = [0.35, 0.2, 0.12, 0.08, 0.05, 0.03];
/// End of follow-up, in years.
pub const COLON_MAX_FOLLOW_UP: f64 = 7.0;

/// The 50-subject smoke cohort: a small draw from the linear mechanism.
pub fn smoke() -> AppResult<Dataset> {
    Ok(simulate_replicate(&Mechanism::default_for(MechanismKind::CoxLinear), 50, 50)?.0)
}

pub fn colon_covariates() -> Vec<CovariateSpec> {
    vec![
        CovariateSpec::numeric("age"),
        CovariateSpec::categorical("stage", 4),
        CovariateSpec::categorical("dep", 5),
        CovariateSpec::categorical("cvd", 2),
        CovariateSpec::categorical("diabetes", 2),
        CovariateSpec::categorical("renal", 2),
        CovariateSpec::categorical("ep", 2),
    ]
}

/// Male population mortality by deprivation quintile (key = level index).
pub fn colon_life_table() -> LifeTable {
    let mut lt = LifeTable::new();
    for dep in 0..5 {
        for age in 0..=relsurv_core::simgen::LIFE_TABLE_MAX_AGE {
            let rate = (-10.0 + 0.092 * age as f64).exp() * (1.0 + 0.1 * dep as f64);
            lt.insert(vec![dep], age, rate).expect("finite rates");
        }
    }
    lt
}

/// Log excess-hazard ratio of a colon-like patient in bin `b` of the
/// generating grid: stage and emergency presentation matter most early on.
pub fn colon_log_hazard_ratio(x: &[f64], b: usize) -> f64 {
    let early = b < 2;
    let stage = match x[1] as usize {
        0 => -0.8,
        1 => -0.3,
        2 => 0.4,
        _ if early => 2.0,
        _ => 1.2,
    };
    let ep = if x[6] > 0.5 {
        if b == 0 {
            1.0
        } else {
            0.3
        }
    } else {
        0.0
    };
    stage + ep + 0.02 * (x[0] - 72.0) + 0.04 * x[2] + 0.1 * (x[3] + x[4] + x[5])
}

/// A colon-cancer-like cohort of `n` men with non-proportional excess
/// hazards and deprivation-specific population mortality.
pub fn colon_like(n: usize, seed: u64) -> AppResult<Dataset> {
    let grid = TimeGrid::new(COLON_CUTS.to_vec())?;
    let lt = colon_life_table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(n);
    let bern = |rng: &mut ChaCha8Rng, p: f64| f64::from(u8::from(rng.random::<f64>() < p));
    for _ in 0..n {
        let age = (72.0 + 11.0 * sample_normal(&mut rng)).clamp(30.0, 99.0);
        let u: f64 = rng.random();
        let stage = if u < 0.15 {
            0.0
        } else if u < 0.45 {
            1.0
        } else if u < 0.78 {
            2.0
        } else {
            3.0
        };
        let dep = rng.random_range(0..5) as f64;
        let cvd = bern(&mut rng, 0.15 + 0.004 * (age - 72.0).max(0.0));
        let diabetes = bern(&mut rng, 0.12);
        let renal = bern(&mut rng, 0.06);
        let ep = bern(&mut rng, 0.12 + 0.03 * dep + 0.05 * f64::from(u8::from(stage >= 3.0)));
        let x = vec![age, stage, dep, cvd, diabetes, renal, ep];
        let hazards: Vec<f64> = COLON_RATES
            .iter()
            .enumerate()
            .map(|(b, l)| l * colon_log_hazard_ratio(&x, b).exp())
            .collect();
        let t_e = inverse_cumulative_hazard(&grid, &hazards, sample_exp(&mut rng, 1.0));
        let keys = vec![dep as i64];
        let t_p = sample_population_time(&lt, age, &keys, &mut rng)?;
        let c = (10.0 * (1.0 - rng.random::<f64>())).min(COLON_MAX_FOLLOW_UP);
        let death = t_e.min(t_p);
        let y = death.min(c);
        let mut rec = SubjectRecord::new(y, death < c, x, lt.lookup(age, &keys, y)?);
        rec.age = Some(age);
        rec.w_keys = keys;
        subjects.push(rec);
    }
    Ok(Dataset::new(subjects, colon_covariates())?)
}

/// Level labels of the colon-like covariates, for writing CSV files.
pub fn colon_labels() -> Vec<Option<Vec<String>>> {
    let l = |v: &[&str]| Some(v.iter().map(|s| s.to_string()).collect());
    vec![None, l(&STAGE_LEVELS), l(&DEP_LEVELS), l(&YES_NO), l(&YES_NO), l(&YES_NO), l(&YES_NO)]
}

pub fn smoke_labels() -> Vec<Option<Vec<String>>> {
    vec![None, Some(vec!["female".into(), "male".into()]), None, None]
}
