//! CSV cohorts and life tables, and the on-disk layout of fitted draws.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use relsurv_core::{CovariateSpec, Dataset, LifeTable, PosteriorDraws, SubjectRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CovariateConfig, Schema};
use crate::error::{AppError, AppResult};

pub fn covariate_specs(covariates: &[CovariateConfig]) -> Vec<CovariateSpec> {
    covariates
        .iter()
        .map(|c| match &c.levels {
            Some(levels) => CovariateSpec::categorical(c.name.clone(), levels.len() as u32),
            None => CovariateSpec::numeric(c.name.clone()),
        })
        .collect()
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> AppResult<Self> {
        let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| AppError::format(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AppError::format(path, e.to_string()))?;
        if rows.is_empty() {
            return Err(AppError::format(path, "no data rows"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, names: &[&str]) -> AppResult<Vec<usize>> {
        let missing: Vec<&str> = names.iter().copied().filter(|n| self.column(n).is_none()).collect();
        if !missing.is_empty() {
            return Err(AppError::format(
                &self.path,
                format!("missing column(s): {}", missing.join(", ")),
            ));
        }
        Ok(names.iter().map(|n| self.column(n).unwrap()).collect())
    }

    fn error(&self, row: usize, column: &str, message: impl std::fmt::Display) -> AppError {
        AppError::format(&self.path, format!("row {}, column `{column}`: {message}", row + 1))
    }

    fn number(&self, row: usize, col: usize) -> AppResult<f64> {
        let cell = &self.rows[row][col];
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(row, &self.header[col], format!("`{cell}` is not a finite number")))
    }

    fn integer(&self, row: usize, col: usize) -> AppResult<i64> {
        let cell = &self.rows[row][col];
        cell.parse::<i64>()
            .map_err(|_| self.error(row, &self.header[col], format!("`{cell}` is not an integer")))
    }

    fn covariate(&self, row: usize, col: usize, spec: &CovariateConfig) -> AppResult<f64> {
        match &spec.levels {
            None => self.number(row, col),
            Some(levels) => level_code(&self.rows[row][col], levels)
                .map(|c| c as f64)
                .ok_or_else(|| {
                    self.error(
                        row,
                        &spec.name,
                        format!("`{}` is not one of the levels {levels:?}", &self.rows[row][col]),
                    )
                }),
        }
    }
}

fn level_code(cell: &str, levels: &[String]) -> Option<usize> {
    levels.iter().position(|l| l == cell)
}

/// Integer stratum code of a life-table key cell: the level index for
/// categorical covariates, the integer itself otherwise.
fn key_code(table: &Table, row: usize, col: usize, schema: &Schema) -> AppResult<i64> {
    let name = &table.header[col];
    match schema.covariates.iter().find(|c| &c.name == name).and_then(|c| c.levels.as_ref()) {
        Some(levels) => level_code(&table.rows[row][col], levels)
            .map(|c| c as i64)
            .ok_or_else(|| table.error(row, name, format!("`{}` is not one of the levels {levels:?}", &table.rows[row][col]))),
        None => table.integer(row, col),
    }
}

/// Read a cohort. Population hazards come from `life_table` at attained
/// age `age + time` when given, otherwise from the `pop_hazard` column.
pub fn read_cohort(path: &Path, schema: &Schema, life_table: Option<&LifeTable>) -> AppResult<Dataset> {
    let table = Table::read(path)?;
    let mut names: Vec<&str> = vec![schema.time.as_str(), schema.status.as_str()];
    if life_table.is_some() {
        names.push(schema.age.as_str());
        names.extend(schema.life_table_keys.iter().map(String::as_str));
    } else {
        names.push(schema.pop_hazard.as_str());
    }
    names.extend(schema.covariates.iter().map(|c| c.name.as_str()));
    let cols = table.require(&names)?;
    let (time, status, third) = (cols[0], cols[1], cols[2]);
    let key_cols = if life_table.is_some() {
        &cols[3..3 + schema.life_table_keys.len()]
    } else {
        &[][..]
    };
    let cov_cols = &cols[cols.len() - schema.covariates.len()..];
    let mut subjects = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let y = table.number(row, time)?;
        let delta = match &table.rows[row][status] {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => return Err(table.error(row, &schema.status, format!("`{other}` is not 0 or 1"))),
        };
        let x = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, spec)| table.covariate(row, c, spec))
            .collect::<AppResult<Vec<f64>>>()?;
        let record = match life_table {
            Some(lt) => {
                let age = table.number(row, third)?;
                let keys = key_cols
                    .iter()
                    .map(|&c| key_code(&table, row, c, schema))
                    .collect::<AppResult<Vec<i64>>>()?;
                let pop = lt.lookup(age, &keys, y).map_err(|e| table.error(row, &schema.age, e))?;
                let mut r = SubjectRecord::new(y, delta, x, pop);
                r.age = Some(age);
                r.w_keys = keys;
                r
            }
            None => SubjectRecord::new(y, delta, x, table.number(row, third)?),
        };
        subjects.push(record);
    }
    Dataset::new(subjects, covariate_specs(&schema.covariates)).map_err(|e| match e {
        relsurv_core::Error::Record { row, field, message } => table.error(row, &field, message),
        other => other.into(),
    })
}

/// Covariate rows of a prediction file, optionally keeping only rows whose
/// `column` equals `value`.
pub fn read_covariates(path: &Path, schema: &Schema, filter: Option<(&str, &str)>) -> AppResult<Vec<Vec<f64>>> {
    let table = Table::read(path)?;
    let missing: Vec<&str> = schema
        .covariates
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| table.column(n).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(AppError::format(
            path,
            format!("schema mismatch; missing covariate column(s): {}", missing.join(", ")),
        ));
    }
    let filter_col = match filter {
        Some((name, value)) => Some((table.require(&[name])?[0], value)),
        None => None,
    };
    let cols: Vec<usize> = schema.covariates.iter().map(|c| table.column(&c.name).unwrap()).collect();
    let mut out = Vec::new();
    for row in 0..table.rows.len() {
        if let Some((c, value)) = filter_col {
            if &table.rows[row][c] != value {
                continue;
            }
        }
        out.push(
            cols.iter()
                .zip(&schema.covariates)
                .map(|(&c, spec)| table.covariate(row, c, spec))
                .collect::<AppResult<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

/// Read a life table with the schema's key columns, `age` (integer
/// attained-age year) and `rate` (per time unit).
pub fn read_life_table(path: &Path, schema: &Schema) -> AppResult<LifeTable> {
    let table = Table::read(path)?;
    let mut names: Vec<&str> = schema.life_table_keys.iter().map(String::as_str).collect();
    names.extend(["age", "rate"]);
    let cols = table.require(&names)?;
    let k = schema.life_table_keys.len();
    let mut lt = LifeTable::new();
    for row in 0..table.rows.len() {
        let keys = cols[..k]
            .iter()
            .map(|&c| key_code(&table, row, c, schema))
            .collect::<AppResult<Vec<i64>>>()?;
        let age = table.integer(row, cols[k])?;
        let rate = table.number(row, cols[k + 1])?;
        lt.insert(keys, age, rate).map_err(|e| table.error(row, "rate", e))?;
    }
    Ok(lt)
}

/// Write a cohort in the default column layout (`time`, `status`,
/// `pop_hazard`, `age` when known, then the covariates).
pub fn write_cohort(path: &Path, dataset: &Dataset, labels: &[Option<Vec<String>>]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    let with_age = dataset.subjects().iter().all(|s| s.age.is_some());
    let mut header = vec!["time".to_string(), "status".into(), "pop_hazard".into()];
    if with_age {
        header.push("age_at_entry".into());
    }
    header.extend(dataset.covariates().iter().map(|c| c.name.clone()));
    let csv_err = |e: csv::Error| AppError::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for s in dataset.subjects() {
        let mut rec = vec![
            s.y.to_string(),
            u8::from(s.delta).to_string(),
            s.pop_hazard.to_string(),
        ];
        if let Some(age) = s.age.filter(|_| with_age) {
            rec.push(age.to_string());
        }
        for (j, v) in s.x.iter().enumerate() {
            rec.push(match labels.get(j).and_then(Option::as_ref) {
                Some(l) => l[*v as usize].clone(),
                None => v.to_string(),
            });
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Write a life table as CSV with columns `key_names`, `age` and `rate`;
/// key codes are written as their labels when given.
pub fn write_life_table(
    path: &Path,
    table: &LifeTable,
    key_names: &[&str],
    key_labels: &[Option<Vec<String>>],
) -> AppResult<()> {
    let mut header: Vec<&str> = key_names.to_vec();
    header.extend(["age", "rate"]);
    let rows: Vec<Vec<String>> = table
        .entries()
        .map(|(keys, age, rate)| {
            let mut r: Vec<String> = keys
                .iter()
                .enumerate()
                .map(|(j, k)| match key_labels.get(j).and_then(Option::as_ref) {
                    Some(l) => l[*k as usize].clone(),
                    None => k.to_string(),
                })
                .collect();
            r.push(age.to_string());
            r.push(rate.to_string());
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

/// SHA-256 of the canonical text form of a dataset: covariate names and
/// kinds, then one line per subject with exact float representations.
pub fn fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for c in dataset.covariates() {
        h.update(format!("{}:{:?};", c.name, c.kind));
    }
    h.update(b"\n");
    for s in dataset.subjects() {
        let mut line = format!("{:?},{},{:?}", s.y, u8::from(s.delta), s.pop_hazard);
        for v in &s.x {
            line.push_str(&format!(",{v:?}"));
        }
        line.push('\n');
        h.update(line.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|e| AppError::format(path, e.to_string()))?;
    std::io::Write::flush(&mut w).map_err(|e| AppError::io(path, e))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e.to_string()))?;
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| AppError::format(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Write rows of plain values as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| AppError::format(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn create_dir(path: &Path) -> AppResult<()> {
    fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

/// Description of a draws directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub fingerprint: String,
    pub schema: Schema,
    pub subjects: usize,
    pub chains: usize,
}

pub const META_FILE: &str = "meta.json";
pub const CONFIG_ECHO: &str = "config.toml";
pub const REPORT_FILE: &str = "fit_report.json";

pub fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{}.json", chain + 1))
}

/// Load the metadata and every chain of a draws directory, pooled.
pub fn load_fit(dir: &Path) -> AppResult<(FitMeta, PosteriorDraws)> {
    let meta: FitMeta = read_json(&dir.join(META_FILE))?;
    let chains = (0..meta.chains)
        .map(|c| read_json::<PosteriorDraws>(&chain_file(dir, c)))
        .collect::<AppResult<Vec<_>>>()?;
    Ok((meta, PosteriorDraws::combine(chains)?))
}

/// Rows of a `key → values` CSV file used for externally produced
/// estimates.
pub fn read_records(path: &Path) -> AppResult<Vec<HashMap<String, String>>> {
    let table = Table::read(path)?;
    Ok(table
        .rows
        .iter()
        .map(|r| table.header.iter().cloned().zip(r.iter().map(str::to_string)).collect())
        .collect())
}
