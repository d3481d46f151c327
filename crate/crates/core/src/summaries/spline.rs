//! Natural cubic spline bases on standardized covariates.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::stats::{mean, quantile_sorted, sort_f64, variance};

/// Natural cubic spline basis in truncated-power form. Column 0 is linear;
/// the rest carry the curvature. Columns are centred over the design
/// points they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    center: f64,
    scale: f64,
    /// Knots on the standardized scale, boundary knots included.
    knots: Vec<f64>,
    col_means: Vec<f64>,
}

impl SplineBasis {
    /// Basis with `interior` knots at evenly spaced quantiles of `values`
    /// plus the two boundary knots; duplicate knots are dropped. `None` if
    /// `values` is constant.
    pub fn new(values: &[f64], interior: usize) -> Option<Self> {
        let center = mean(values);
        let scale = variance(values).sqrt();
        if !(scale > 0.0) || !scale.is_finite() {
            return None;
        }
        let mut z: Vec<f64> = values.iter().map(|v| (v - center) / scale).collect();
        sort_f64(&mut z);
        let mut knots: Vec<f64> = Vec::with_capacity(interior + 2);
        for k in 0..=interior + 1 {
            let q = quantile_sorted(&z, k as f64 / (interior + 1) as f64);
            if knots.last().is_none_or(|&last| q > last + 1e-9) {
                knots.push(q);
            }
        }
        let mut basis = Self {
            center,
            scale,
            knots,
            col_means: Vec::new(),
        };
        let cols = basis.columns();
        let mut sums = alloc::vec![0.0; cols];
        let mut row = alloc::vec![0.0; cols];
        for &v in values {
            basis.raw(v, &mut row);
            for (s, r) in sums.iter_mut().zip(&row) {
                *s += r;
            }
        }
        basis.col_means = sums.iter().map(|s| s / values.len() as f64).collect();
        Some(basis)
    }

    /// Number of columns: one linear term plus `knots − 2` curvature terms.
    pub fn columns(&self) -> usize {
        1 + self.knots.len().saturating_sub(2)
    }

    fn raw(&self, v: f64, out: &mut [f64]) {
        let z = (v - self.center) / self.scale;
        out[0] = z;
        let k = self.knots.len();
        if k < 3 {
            return;
        }
        let last = self.knots[k - 1];
        let d = |j: usize| -> f64 {
            let kj = self.knots[j];
            (cube_plus(z - kj) - cube_plus(z - last)) / (last - kj)
        };
        let d_prev = d(k - 2);
        for j in 0..k - 2 {
            out[j + 1] = d(j) - d_prev;
        }
    }

    /// Centred basis row at `v`.
    pub fn eval(&self, v: f64, out: &mut [f64]) {
        self.raw(v, out);
        for (o, m) in out.iter_mut().zip(&self.col_means) {
            *o -= m;
        }
    }

    pub fn row(&self, v: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.columns()];
        self.eval(v, &mut out);
        out
    }
}

fn cube_plus(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}
