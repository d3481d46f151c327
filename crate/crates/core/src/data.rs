//! Subjects, datasets, life tables and the piecewise time grid.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sort_f64};

/// Largest number of levels a categorical covariate may declare; level sets
/// are stored as 64-bit masks.
pub const MAX_LEVELS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    /// Integer-coded levels `0..levels`.
    Categorical { levels: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: u32) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical { levels },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, CovariateKind::Categorical { .. })
    }
}

/// One individual's follow-up record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    /// Follow-up time in years.
    pub y: f64,
    /// Death observed (`true`) or censored.
    pub delta: bool,
    pub x: Vec<f64>,
    /// Population hazard at attained age `age + y`, per year.
    pub pop_hazard: f64,
    pub age: Option<f64>,
    pub w_keys: Vec<i64>,
}

impl SubjectRecord {
    pub fn new(y: f64, delta: bool, x: Vec<f64>, pop_hazard: f64) -> Self {
        Self {
            y,
            delta,
            x,
            pop_hazard,
            age: None,
            w_keys: Vec::new(),
        }
    }
}

/// A validated cohort; the empirical distribution of `x` stands in for the
/// population covariate distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<SubjectRecord>,
    covariates: Vec<CovariateSpec>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>, covariates: Vec<CovariateSpec>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::invalid("dataset has no subjects"));
        }
        for spec in &covariates {
            if let CovariateKind::Categorical { levels } = spec.kind {
                if !(1..=MAX_LEVELS).contains(&levels) {
                    return Err(Error::invalid(format!(
                        "covariate `{}` declares {levels} levels (1..={MAX_LEVELS} allowed)",
                        spec.name
                    )));
                }
            }
        }
        for (row, s) in subjects.iter().enumerate() {
            validate_record(row, s, &covariates)?;
        }
        Ok(Self {
            subjects,
            covariates,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Follow-up times of subjects with an observed death.
    pub fn event_times(&self) -> Vec<f64> {
        self.subjects
            .iter()
            .filter(|s| s.delta)
            .map(|s| s.y)
            .collect()
    }

    /// Grid times: event times, or every follow-up time when no deaths are
    /// observed.
    pub fn grid_times(&self) -> Vec<f64> {
        let events = self.event_times();
        if events.is_empty() {
            self.subjects.iter().map(|s| s.y).collect()
        } else {
            events
        }
    }

    /// Subset of subjects satisfying `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&SubjectRecord) -> bool) -> Result<Dataset> {
        let subjects: Vec<_> = self.subjects.iter().filter(|s| keep(s)).cloned().collect();
        if subjects.is_empty() {
            return Err(Error::invalid("filter selects no subjects"));
        }
        Ok(Dataset {
            subjects,
            covariates: self.covariates.clone(),
        })
    }

    /// Recompute every subject's population hazard from a life table using
    /// its age at diagnosis and stratification keys.
    pub fn attach_life_table(&mut self, table: &LifeTable) -> Result<()> {
        for (row, s) in self.subjects.iter_mut().enumerate() {
            let age = s.age.ok_or_else(|| Error::Record {
                row,
                field: "age".into(),
                message: "age is required for life-table lookup".into(),
            })?;
            s.pop_hazard = table.lookup(age, &s.w_keys, s.y)?;
        }
        Ok(())
    }
}

fn validate_record(row: usize, s: &SubjectRecord, covariates: &[CovariateSpec]) -> Result<()> {
    let bad = |field: &str, message: String| Error::Record {
        row,
        field: field.into(),
        message,
    };
    if !(s.y.is_finite() && s.y >= 0.0) {
        return Err(bad("y", format!("follow-up time {} must be finite and >= 0", s.y)));
    }
    if !(s.pop_hazard.is_finite() && s.pop_hazard >= 0.0) {
        return Err(bad(
            "pop_hazard",
            format!("population hazard {} must be finite and >= 0", s.pop_hazard),
        ));
    }
    if s.x.len() != covariates.len() {
        return Err(bad(
            "x",
            format!("expected {} covariates, found {}", covariates.len(), s.x.len()),
        ));
    }
    for (v, spec) in s.x.iter().zip(covariates) {
        if !v.is_finite() {
            return Err(bad(&spec.name, format!("non-finite value {v}")));
        }
        if let CovariateKind::Categorical { levels } = spec.kind {
            if v.fract() != 0.0 || *v < 0.0 || *v >= levels as f64 {
                return Err(bad(
                    &spec.name,
                    format!("level {v} outside 0..{levels}"),
                ));
            }
        }
    }
    Ok(())
}

/// Stratum keys of a life table, excluding the attained-age year.
pub type LifeTableKey = Vec<i64>;

/// Population mortality rates per year, indexed by stratum keys and integer
/// attained age. The rate is constant within each year of attained age.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifeTable {
    rates: BTreeMap<(LifeTableKey, i64), f64>,
}

impl LifeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, keys: LifeTableKey, age_year: i64, rate: f64) -> Result<()> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::invalid(format!(
                "life-table rate {rate} at age {age_year} must be finite and >= 0"
            )));
        }
        self.rates.insert((keys, age_year), rate);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LifeTableKey, i64, f64)> {
        self.rates.iter().map(|((k, a), r)| (k, *a, *r))
    }

    /// Rate for attained-age year `age_year`.
    pub fn rate(&self, keys: &[i64], age_year: i64) -> Result<f64> {
        self.rates
            .get(&(keys.to_vec(), age_year))
            .copied()
            .ok_or_else(|| Error::LifeTableDomain {
                age_year,
                keys: keys.to_vec(),
            })
    }

    /// `λ_P(age + t | w)` using attained age `floor(age + t)`.
    pub fn lookup(&self, age: f64, keys: &[i64], t: f64) -> Result<f64> {
        self.rate(keys, (age + t).floor() as i64)
    }
}

/// Bin boundaries `0 = t_0 < t_1 < … < t_{B-1}` with an implicit `t_B = ∞`.
///
/// Bins are indexed from zero: bin `b` covers `[t_b, t_{b+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    cuts: Vec<f64>,
}

impl TimeGrid {
    /// Grid from the finite interior boundaries `t_1..t_{B-1}`.
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        let mut prev = 0.0;
        for &c in &cuts {
            if !(c.is_finite() && c > prev) {
                return Err(Error::invalid(format!(
                    "grid boundaries must be finite and strictly increasing from 0, got {cuts:?}"
                )));
            }
            prev = c;
        }
        Ok(Self { cuts })
    }

    pub fn single_bin() -> Self {
        Self { cuts: Vec::new() }
    }

    /// Default bin count `round(n^{1/3})`, at least one.
    pub fn default_bins(n: usize) -> usize {
        (libm::cbrt(n as f64).round() as usize).max(1)
    }

    /// Boundaries at evenly spaced empirical quantiles (type 7) of `times`,
    /// with duplicate or non-positive boundaries collapsed.
    pub fn from_quantiles(times: &[f64], bins: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("cannot build a time grid from no event times"));
        }
        if bins == 0 {
            return Err(Error::invalid("bin count must be at least 1"));
        }
        let mut sorted = times.to_vec();
        sort_f64(&mut sorted);
        let mut cuts: Vec<f64> = Vec::with_capacity(bins - 1);
        for b in 1..bins {
            let q = quantile_sorted(&sorted, b as f64 / bins as f64);
            if q > cuts.last().copied().unwrap_or(0.0) {
                cuts.push(q);
            }
        }
        Self::new(cuts)
    }

    pub fn bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn lower(&self, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            self.cuts[b - 1]
        }
    }

    pub fn upper(&self, b: usize) -> f64 {
        self.cuts.get(b).copied().unwrap_or(f64::INFINITY)
    }

    pub fn width(&self, b: usize) -> f64 {
        self.upper(b) - self.lower(b)
    }

    /// The unique bin with `t_b ≤ y < t_{b+1}`.
    pub fn bin_of(&self, y: f64) -> usize {
        self.cuts.partition_point(|&c| c <= y)
    }

    /// Exposure of `y` in each bin, and the bin containing `y`.
    pub fn exposure(&self, y: f64) -> (Vec<f64>, usize) {
        let bin = self.bin_of(y);
        let mut z = vec![0.0; self.bins()];
        for (b, zb) in z.iter_mut().enumerate().take(bin) {
            *zb = self.width(b);
        }
        z[bin] = y - self.lower(bin);
        (z, bin)
    }

    /// Exposure of `y` in bin `b` alone.
    pub fn exposure_in(&self, y: f64, b: usize) -> f64 {
        let lo = self.lower(b);
        if y <= lo {
            0.0
        } else {
            y.min(self.upper(b)) - lo
        }
    }

    /// `F_b = Σ_{k<b} λ_k (t_{k+1} − t_k)` for `b = 0..B`.
    pub fn cumulative_offsets(&self, rates: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bins());
        let mut acc = 0.0;
        for b in 0..self.bins() {
            out.push(acc);
            if b + 1 < self.bins() {
                acc += rates[b] * self.width(b);
            }
        }
        out
    }

    /// Baseline cumulative hazard at `y`: `λ_{b(y)} (y − t_{b(y)}) + F_{b(y)}`.
    pub fn cumulative_baseline(&self, y: f64, rates: &[f64], offsets: &[f64]) -> f64 {
        let b = self.bin_of(y);
        rates[b] * (y - self.lower(b)) + offsets[b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid12() -> TimeGrid {
        TimeGrid::new(vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn exposure_examples() {
        let g = grid12();
        assert_eq!(g.exposure(1.5), (vec![1.0, 0.5, 0.0], 1));
        assert_eq!(g.exposure(0.0), (vec![0.0, 0.0, 0.0], 0));
        let (z, b) = g.exposure(3.7);
        assert_eq!(b, 2);
        assert_eq!(z[..2], [1.0, 1.0]);
        assert!((z[2] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn boundary_belongs_to_next_bin() {
        let g = grid12();
        assert_eq!(g.bin_of(1.0), 1);
        assert_eq!(g.bin_of(0.999), 0);
    }

    #[test]
    fn quantile_grid() {
        let g = TimeGrid::from_quantiles(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(g.cuts(), &[2.5]);
        let g = TimeGrid::from_quantiles(&[1.0, 2.0], 1).unwrap();
        assert_eq!(g.bins(), 1);
        // Ties collapse.
        let g = TimeGrid::from_quantiles(&[1.0, 1.0, 1.0, 1.0, 5.0], 4).unwrap();
        assert_eq!(g.cuts(), &[1.0]);
        assert!(TimeGrid::from_quantiles(&[], 3).is_err());
    }

    #[test]
    fn default_bin_count() {
        assert_eq!(TimeGrid::default_bins(1043), 10);
        assert_eq!(TimeGrid::default_bins(1), 1);
        assert_eq!(TimeGrid::default_bins(500), 8);
    }

    #[test]
    fn life_table_lookup() {
        let mut t = LifeTable::new();
        t.insert(vec![], 70, 0.02).unwrap();
        t.insert(vec![], 71, 0.03).unwrap();
        assert_eq!(t.lookup(70.0, &[], 0.5).unwrap(), 0.02);
        assert_eq!(t.lookup(70.0, &[], 1.0).unwrap(), 0.03);
        assert!(matches!(
            t.lookup(70.0, &[], 5.0),
            Err(Error::LifeTableDomain { age_year: 75, .. })
        ));
        assert!(t.lookup(70.0, &[1], 0.0).is_err());
    }

    #[test]
    fn record_validation() {
        let covs = vec![CovariateSpec::categorical("stage", 5)];
        let ok = SubjectRecord::new(1.0, true, vec![4.0], 0.01);
        assert!(Dataset::new(vec![ok.clone()], covs.clone()).is_ok());
        let bad = SubjectRecord::new(1.0, true, vec![5.0], 0.01);
        let err = Dataset::new(vec![ok, bad], covs).unwrap_err();
        assert!(matches!(err, Error::Record { row: 1, ref field, .. } if field == "stage"));
        let neg = SubjectRecord::new(-1.0, false, vec![], 0.0);
        assert!(matches!(
            Dataset::new(vec![neg], vec![]),
            Err(Error::Record { row: 0, ref field, .. }) if field == "y"
        ));
    }
}
