//! Run configuration files.
//!
//! A run configuration is a flat TOML file. Paths are resolved relative to
//! the directory holding the file. Every key except `data` has a default:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `mode` | `"ph"` | `"ph"` or `"nph"` |
//! | `data` | | cohort CSV |
//! | `life_table` | none | life-table CSV; needs `age` and `life_table_keys` |
//! | `output` | `"relsurv-fit"` | draws directory |
//! | `time`, `status` | `"time"`, `"status"` | follow-up and death-indicator columns |
//! | `pop_hazard` | `"pop_hazard"` | population hazard column, used without a life table |
//! | `age` | `"age"` | age at diagnosis column, used with a life table |
//! | `life_table_keys` | `[]` | stratum columns shared by cohort and life table |
//! | `covariates` | `[]` | `{ name = "..." }` or `{ name = "...", levels = [...] }` |
//! | `bins` | `round(n^(1/3))` | number of time bins at event-time quantiles |
//! | `cuts` | none | explicit interior bin boundaries (overrides `bins`) |
//! | `num_trees` | 100 | |
//! | `iterations`, `burn_in`, `thin` | 11000, 1000, 10 | |
//! | `chains`, `seed` | 1, 1 | |
//! | `gamma`, `beta` | 0.95, 2.0 | tree depth prior |
//! | `sigma_mu` | `1.5 / sqrt(num_trees)` | leaf scale |
//! | `a_lambda` | 1.0 | shape of the baseline-rate prior |
//! | `omega` | `"learned"` | `"learned"`, `"excluded"` or a fixed probability |
//!
//! Times are in the cohort's own unit; population hazards and life-table
//! rates must use the same unit.

use std::path::{Path, PathBuf};

use relsurv_core::sampler::TimeSplits;
use relsurv_core::{Mode, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub name: String,
    /// Level labels of a categorical covariate; absent for numeric ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSetting {
    Named(String),
    Fixed(f64),
}

/// Column names of a cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub time: String,
    pub status: String,
    pub pop_hazard: String,
    pub age: String,
    pub life_table_keys: Vec<String>,
    pub covariates: Vec<CovariateConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("relsurv-fit")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub life_table: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "d_time")]
    pub time: String,
    #[serde(default = "d_status")]
    pub status: String,
    #[serde(default = "d_pop")]
    pub pop_hazard: String,
    #[serde(default = "d_age")]
    pub age: String,
    #[serde(default)]
    pub life_table_keys: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<CovariateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuts: Option<Vec<f64>>,
    #[serde(default = "d_trees")]
    pub num_trees: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_burn")]
    pub burn_in: usize,
    #[serde(default = "d_thin")]
    pub thin: usize,
    #[serde(default = "d_one")]
    pub chains: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mu: Option<f64>,
    #[serde(default = "d_a_lambda")]
    pub a_lambda: f64,
    #[serde(default = "d_omega")]
    pub omega: OmegaSetting,
}

fn d_time() -> String {
    "time".into()
}
fn d_status() -> String {
    "status".into()
}
fn d_pop() -> String {
    "pop_hazard".into()
}
fn d_age() -> String {
    "age".into()
}
fn d_trees() -> usize {
    100
}
fn d_iterations() -> usize {
    11_000
}
fn d_burn() -> usize {
    1_000
}
fn d_thin() -> usize {
    10
}
fn d_one() -> usize {
    1
}
fn d_seed() -> u64 {
    1
}
fn d_gamma() -> f64 {
    0.95
}
fn d_beta() -> f64 {
    2.0
}
fn d_a_lambda() -> f64 {
    1.0
}
fn d_omega() -> OmegaSetting {
    OmegaSetting::Named("learned".into())
}

impl RunConfig {
    /// Parse a configuration file, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.data = base.join(&config.data);
        config.life_table = config.life_table.map(|p| base.join(p));
        config.output = base.join(&config.output);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialise")
    }

    pub fn schema(&self) -> Schema {
        Schema {
            time: self.time.clone(),
            status: self.status.clone(),
            pop_hazard: self.pop_hazard.clone(),
            age: self.age.clone(),
            life_table_keys: self.life_table_keys.clone(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn time_splits(&self) -> AppResult<TimeSplits> {
        match &self.omega {
            OmegaSetting::Named(s) if s == "learned" => Ok(TimeSplits::Learned),
            OmegaSetting::Named(s) if s == "excluded" => Ok(TimeSplits::Excluded),
            OmegaSetting::Fixed(w) => Ok(TimeSplits::Fixed(*w)),
            OmegaSetting::Named(s) => Err(AppError::input(format!(
                "omega must be \"learned\", \"excluded\" or a number, got \"{s}\""
            ))),
        }
    }

    /// Sampler settings of chain `chain` (0-based).
    pub fn sampler(&self, chain: usize) -> AppResult<SamplerConfig> {
        Ok(SamplerConfig {
            mode: self.mode,
            num_trees: self.num_trees,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: chain_seed(self.seed, chain),
            gamma: self.gamma,
            beta: self.beta,
            sigma_mu: self.sigma_mu,
            a_lambda: self.a_lambda,
            time_splits: self.time_splits()?,
            ..SamplerConfig::default()
        })
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.chains == 0 {
            return Err(AppError::input("chains must be at least 1"));
        }
        if self.bins == Some(0) {
            return Err(AppError::input("bins must be at least 1"));
        }
        if self.life_table.is_none() && !self.life_table_keys.is_empty() {
            return Err(AppError::input("life_table_keys given without a life_table"));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(AppError::input(format!("covariate `{}` declared twice", c.name)));
            }
            if c.levels.as_ref().is_some_and(|l| l.is_empty()) {
                return Err(AppError::input(format!("covariate `{}` declares no levels", c.name)));
            }
        }
        self.sampler(0)?.validate()?;
        Ok(())
    }
}

/// SplitMix64 finaliser; derives independent seeds from a master seed and
/// a counter.
pub fn split_seed(master: u64, counter: u64) -> u64 {
    let mut z = master.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of chain `chain`; the first chain uses the master seed itself.
pub fn chain_seed(master: u64, chain: usize) -> u64 {
    if chain == 0 {
        master
    } else {
        split_seed(master, chain as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_model_defaults() {
        let c: RunConfig = toml::from_str("data = \"x.csv\"").unwrap();
        assert_eq!(c.num_trees, 100);
        assert_eq!((c.iterations, c.burn_in, c.thin), (11_000, 1_000, 10));
        assert_eq!((c.gamma, c.beta), (0.95, 2.0));
        assert_eq!(c.time_splits().unwrap(), TimeSplits::Learned);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_settings() {
        let c: RunConfig = toml::from_str("data = \"x.csv\"\nburn_in = 20\niterations = 10").unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = toml::from_str("data = \"x.csv\"\nomega = \"sometimes\"").unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = toml::from_str("data = \"x.csv\"\nomega = 0.3").unwrap();
        assert_eq!(c.time_splits().unwrap(), TimeSplits::Fixed(0.3));
        assert!(toml::from_str::<RunConfig>("data = \"x.csv\"\ntrees = 3").is_err());
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|c| chain_seed(7, c)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(chain_seed(7, 0), 7);
    }
}
