//! Closed-form pieces of the augmented likelihood: leaf marginals,
//! augmentation probabilities and per-bin exposure sums.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::TimeGrid;
use crate::special::ln_gamma;

/// Sufficient statistics of the units reaching one leaf: the number of
/// excess events `A` and the exposure `B = Σ c e^{η}`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub events: f64,
    pub exposure: f64,
}

/// `ln ∫ e^{Aμ − B e^{μ}} LogGamma(μ; a, b) dμ`.
pub fn leaf_log_marginal(shape: f64, rate: f64, stats: LeafStats) -> f64 {
    let a = shape + stats.events;
    let b = rate + stats.exposure;
    ln_gamma(a) - a * b.ln() + shape * rate.ln() - ln_gamma(shape)
}

/// Integrated likelihood of a tree: the product of its leaf marginals.
pub fn integrated_log_likelihood(stats: &[LeafStats], shape: f64, rate: f64) -> f64 {
    stats
        .iter()
        .map(|s| leaf_log_marginal(shape, rate, *s))
        .sum()
}

/// Probability that an observed death is an excess death,
/// `h_E / (h_P + h_E)` with `h_E = exp(log_excess)`. `None` when both
/// hazards vanish.
pub fn excess_event_probability(pop_hazard: f64, log_excess: f64) -> Option<f64> {
    if pop_hazard <= 0.0 {
        return (log_excess > f64::NEG_INFINITY).then_some(1.0);
    }
    // 1 / (1 + h_P / h_E) evaluated on the log scale.
    let log_ratio = pop_hazard.ln() - log_excess;
    if log_ratio > 700.0 {
        return Some(0.0);
    }
    Some(1.0 / (1.0 + log_ratio.exp()))
}

/// `ln(h_P + exp(log_excess))`.
pub fn log_total_hazard(pop_hazard: f64, log_excess: f64) -> f64 {
    if pop_hazard <= 0.0 {
        return log_excess;
    }
    let lp = pop_hazard.ln();
    let hi = lp.max(log_excess);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((lp - hi).exp() + (log_excess - hi).exp()).ln()
}

/// Work done by [`bin_exposure_recursive`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Per-subject accumulations.
    pub subject_terms: usize,
    /// Per-bin recursion steps.
    pub bin_steps: usize,
}

/// `B_b = Σ_i Z_ib e^{r_i}` by direct summation over every subject and
/// every bin it reaches.
pub fn bin_exposure_direct(grid: &TimeGrid, y: &[f64], exp_r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.bins()];
    for (&yi, &e) in y.iter().zip(exp_r) {
        let (z, _) = grid.exposure(yi);
        for (o, zb) in out.iter_mut().zip(z) {
            *o += zb * e;
        }
    }
    out
}

/// `B_b = Σ_i Z_ib e^{r_i}` in `O(N + B)` using
///
/// `B_{b+1} = (w_{b+1}/w_b)(B_b − Σ_{b_i ∈ {b, b+1}} Z_ib e^{r_i}) + Σ_{b_i = b+1} Z_{i,b+1} e^{r_i}`,
///
/// where `w_b` is the width of bin `b`. The unbounded last bin is summed
/// directly. `bins[i]` is the bin containing `y_i` and `within[i]` is
/// `y_i − t_{bins[i]}`.
pub fn bin_exposure_recursive(
    grid: &TimeGrid,
    bins: &[usize],
    within: &[f64],
    exp_r: &[f64],
    ops: &mut OpCount,
) -> Vec<f64> {
    let nb = grid.bins();
    // Per-bin sums over the subjects whose follow-up ends in that bin.
    let mut partial = vec![0.0; nb];
    let mut ending = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for ((&b, &z), &e) in bins.iter().zip(within).zip(exp_r) {
        partial[b] += z * e;
        ending[b] += e;
        count[b] += 1;
        ops.subject_terms += 1;
    }
    let mut out = vec![0.0; nb];
    out[nb - 1] = partial[nb - 1];
    if nb == 1 {
        return out;
    }
    let mut beyond_count = vec![0usize; nb + 1];
    for b in (0..nb).rev() {
        beyond_count[b] = beyond_count[b + 1] + count[b];
    }
    let beyond_first: f64 = ending[1..].iter().sum();
    out[0] = partial[0] + grid.width(0) * beyond_first;
    ops.bin_steps += nb;
    for b in 0..nb.saturating_sub(2) {
        let w = grid.width(b);
        let w_next = grid.width(b + 1);
        // Exposure in bin b of subjects still at risk past bin b + 1.
        let carried = if beyond_count[b + 2] == 0 {
            0.0
        } else {
            (out[b] - partial[b] - w * ending[b + 1]).max(0.0)
        };
        out[b + 1] = (w_next / w) * carried + partial[b + 1];
        ops.bin_steps += 1;
    }
    out
}
