//! Branching-process tree prior, split-variable probabilities and the
//! log-gamma leaf prior.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Coord, Domain, Region, SplitRule, SplitSpace, TreeNode};
use crate::error::{Error, Result};
use crate::special::{digamma, trigamma};
use crate::stats::sample_log_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    /// Probability that the root splits.
    pub gamma: f64,
    /// Depth decay of the split probability.
    pub beta: f64,
    pub sigma_mu: f64,
    /// Log-gamma leaf prior shape.
    pub leaf_shape: f64,
    /// Log-gamma leaf prior rate.
    pub leaf_rate: f64,
}

impl TreePrior {
    pub fn new(gamma: f64, beta: f64, sigma_mu: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config("tree prior gamma must lie in (0, 1)"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("tree prior beta must be finite and >= 0"));
        }
        let (leaf_shape, leaf_rate) = solve_leaf_prior(sigma_mu)?;
        Ok(Self {
            gamma,
            beta,
            sigma_mu,
            leaf_shape,
            leaf_rate,
        })
    }

    /// `gamma = 0.95`, `beta = 2`, `sigma_mu = 1.5 / sqrt(num_trees)`.
    pub fn default_for(num_trees: usize) -> Self {
        Self::new(0.95, 2.0, 1.5 / (num_trees as f64).sqrt())
            .expect("default tree prior is valid")
    }

    /// Probability that a node at `depth` splits, given a splittable region.
    pub fn split_probability(&self, depth: usize) -> f64 {
        self.gamma * (1.0 + depth as f64).powf(-self.beta)
    }

    pub fn sample_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_log_gamma(rng, self.leaf_shape, self.leaf_rate)
    }
}

/// Shape and rate `(a, b)` of the log-gamma leaf prior with mean zero and
/// variance `sigma_mu²`: `ψ′(a) = sigma_mu²`, `b = exp(ψ(a))`.
pub fn solve_leaf_prior(sigma_mu: f64) -> Result<(f64, f64)> {
    if !(sigma_mu.is_finite() && sigma_mu > 0.0) {
        return Err(Error::config("sigma_mu must be finite and positive"));
    }
    let target = sigma_mu * sigma_mu;
    // ψ′ is strictly decreasing on (0, ∞); bracket then bisect in log a.
    let mut lo = 1e-8f64;
    let mut hi = 1.0f64;
    while trigamma(hi) > target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::config("sigma_mu too small for the leaf prior"));
        }
    }
    while trigamma(lo) < target {
        lo /= 2.0;
        if lo < 1e-300 {
            return Err(Error::config("sigma_mu too large for the leaf prior"));
        }
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if trigamma(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = if (trigamma(lo) - target).abs() < (trigamma(hi) - target).abs() {
        lo
    } else {
        hi
    };
    Ok((a, digamma(a).exp()))
}

/// Unnormalised splitting proportions over the covariates and the time
/// coordinate. Selection at a node is renormalised over the coordinates that
/// can split that node's region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProbs {
    pub covariates: Vec<f64>,
    pub time: f64,
}

impl SplitProbs {
    /// Uniform over `p` covariates, no time coordinate.
    pub fn uniform(p: usize) -> Self {
        Self {
            covariates: alloc::vec![1.0 / p.max(1) as f64; p],
            time: 0.0,
        }
    }

    /// Time coordinate with probability `omega`, covariates sharing the rest.
    pub fn with_time(p: usize, omega: f64) -> Self {
        let each = if p == 0 { 0.0 } else { (1.0 - omega) / p as f64 };
        Self {
            covariates: alloc::vec![each; p],
            time: if p == 0 { 1.0 } else { omega },
        }
    }

    pub fn weight(&self, coord: Coord) -> f64 {
        match coord {
            Coord::Covariate(j) => self.covariates[j],
            Coord::Time => self.time,
        }
    }

    /// Coordinates able to split `region` with positive weight, and their
    /// total weight.
    pub fn available(&self, region: &Region) -> (Vec<Coord>, f64) {
        let mut coords = Vec::new();
        let mut total = 0.0;
        let time = region.bins.is_some().then_some(Coord::Time);
        for c in (0..self.covariates.len()).map(Coord::Covariate).chain(time) {
            let w = self.weight(c);
            if w > 0.0 && region.splittable(c) {
                coords.push(c);
                total += w;
            }
        }
        (coords, total)
    }

    /// `ln` probability of choosing `coord` at a node with `region`.
    pub fn log_choice(&self, coord: Coord, region: &Region) -> f64 {
        let (coords, total) = self.available(region);
        if coords.contains(&coord) {
            self.weight(coord).ln() - total.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample_coord<R: Rng + ?Sized>(&self, region: &Region, rng: &mut R) -> Option<Coord> {
        let (coords, total) = self.available(region);
        let last = *coords.last()?;
        let mut u = rng.random::<f64>() * total;
        for c in coords {
            u -= self.weight(c);
            if u < 0.0 {
                return Some(c);
            }
        }
        Some(last)
    }
}

/// Draw a rule on `coord` uniformly among those splitting `region`.
pub fn sample_rule<R: Rng + ?Sized>(coord: Coord, region: &Region, rng: &mut R) -> SplitRule {
    match coord {
        Coord::Covariate(var) => match region.bounds[var] {
            Domain::Interval { lo, hi } => {
                let mut cut = lo + (hi - lo) * rng.random::<f64>();
                while !(cut > lo && cut < hi) {
                    cut = lo + (hi - lo) * rng.random::<f64>();
                }
                SplitRule::Numeric { var, cut }
            }
            Domain::Levels(mask) => loop {
                let left = rng.random::<u64>() & mask;
                if left != 0 && left != mask {
                    break SplitRule::Categorical { var, left };
                }
            },
        },
        Coord::Time => {
            let (lo, hi) = region.bins.expect("time coordinate present");
            SplitRule::Time {
                cut: rng.random_range(lo..hi),
            }
        }
    }
}

/// Log prior density of a rule at a node: coordinate choice plus the
/// uniform rule density on that coordinate.
pub fn rule_log_prior(rule: &SplitRule, region: &Region, probs: &SplitProbs) -> f64 {
    if !region.admits(rule) {
        return f64::NEG_INFINITY;
    }
    probs.log_choice(rule.coord(), region) + region.rule_log_density(rule)
}

/// Log prior density of a tree's topology and splitting rules (leaf values
/// excluded). Nodes whose region cannot be split are leaves with
/// probability one.
pub fn log_tree_prior(
    tree: &TreeNode,
    space: &SplitSpace,
    probs: &SplitProbs,
    prior: &TreePrior,
) -> f64 {
    fn go(
        node: &TreeNode,
        region: &Region,
        depth: usize,
        probs: &SplitProbs,
        prior: &TreePrior,
    ) -> f64 {
        let (coords, _) = probs.available(region);
        let p_split = if coords.is_empty() {
            0.0
        } else {
            prior.split_probability(depth)
        };
        match node {
            TreeNode::Leaf { .. } => (1.0 - p_split).ln(),
            TreeNode::Branch { rule, left, right } => {
                let own = p_split.ln() + rule_log_prior(rule, region, probs);
                if own == f64::NEG_INFINITY {
                    return own;
                }
                let (l, r) = region.split(rule);
                own + go(left, &l, depth + 1, probs, prior) + go(right, &r, depth + 1, probs, prior)
            }
        }
    }
    go(tree, &space.root(), 0, probs, prior)
}

/// Draw a tree from the branching-process prior with log-gamma leaves.
/// Nodes at `max_depth` are forced to be leaves when a limit is given.
pub fn sample_tree<R: Rng + ?Sized>(
    space: &SplitSpace,
    probs: &SplitProbs,
    prior: &TreePrior,
    max_depth: Option<usize>,
    rng: &mut R,
) -> TreeNode {
    fn go<R: Rng + ?Sized>(
        region: &Region,
        depth: usize,
        probs: &SplitProbs,
        prior: &TreePrior,
        max_depth: Option<usize>,
        rng: &mut R,
    ) -> TreeNode {
        let at_limit = max_depth.is_some_and(|d| depth >= d);
        if !at_limit && rng.random::<f64>() < prior.split_probability(depth) {
            if let Some(coord) = probs.sample_coord(region, rng) {
                let rule = sample_rule(coord, region, rng);
                let (l, r) = region.split(&rule);
                return TreeNode::branch(
                    rule,
                    go(&l, depth + 1, probs, prior, max_depth, rng),
                    go(&r, depth + 1, probs, prior, max_depth, rng),
                );
            }
        }
        TreeNode::leaf(prior.sample_leaf(rng))
    }
    go(&space.root(), 0, probs, prior, max_depth, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_space(p: usize) -> SplitSpace {
        SplitSpace {
            covariates: vec![Domain::Interval { lo: 0.0, hi: 1.0 }; p],
            time_bins: None,
        }
    }

    #[test]
    fn leaf_prior_known_root() {
        let sigma = (core::f64::consts::PI.powi(2) / 6.0).sqrt();
        let (a, b) = solve_leaf_prior(sigma).unwrap();
        assert!((a - 1.0).abs() < 1e-9, "a = {a}");
        assert!((b - (-0.577_215_664_901_532_9f64).exp()).abs() < 1e-9);
        assert!((b - 0.5615).abs() < 1e-4);
    }

    #[test]
    fn leaf_prior_rejects_bad_scale() {
        assert!(solve_leaf_prior(0.0).is_err());
        assert!(solve_leaf_prior(f64::NAN).is_err());
        assert!(solve_leaf_prior(-1.0).is_err());
    }

    #[test]
    fn single_leaf_prior() {
        let prior = TreePrior::new(0.95, 2.0, 0.15).unwrap();
        let lp = log_tree_prior(&TreeNode::leaf(0.0), &unit_space(1), &SplitProbs::uniform(1), &prior);
        assert!((lp - 0.05f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn stump_prior() {
        let prior = TreePrior::new(0.95, 2.0, 0.15).unwrap();
        let t = TreeNode::branch(
            SplitRule::Numeric { var: 0, cut: 0.3 },
            TreeNode::leaf(0.0),
            TreeNode::leaf(0.0),
        );
        let lp = log_tree_prior(&t, &unit_space(1), &SplitProbs::uniform(1), &prior);
        let expected = 0.95f64.ln() + 2.0 * (1.0 - 0.95 / 4.0f64).ln() + 1.0f64.ln() + 0.0;
        assert!((lp - expected).abs() < 1e-14);
    }

    #[test]
    fn exhausted_regions_are_forced_leaves() {
        let prior = TreePrior::new(0.95, 2.0, 0.15).unwrap();
        let space = SplitSpace {
            covariates: vec![Domain::Levels(0b11)],
            time_bins: None,
        };
        let t = TreeNode::branch(
            SplitRule::Categorical { var: 0, left: 0b01 },
            TreeNode::leaf(0.0),
            TreeNode::leaf(0.0),
        );
        let lp = log_tree_prior(&t, &space, &SplitProbs::uniform(1), &prior);
        // One subset pair {0} vs {1} out of 2 proper subsets; children cannot split.
        let expected = 0.95f64.ln() - 2f64.ln();
        assert!((lp - expected).abs() < 1e-14);
    }

    #[test]
    fn sampled_trees_are_valid() {
        let prior = TreePrior::new(0.95, 1.0, 0.15).unwrap();
        let space = SplitSpace {
            covariates: vec![
                Domain::Interval { lo: -1.0, hi: 2.0 },
                Domain::Levels(0b1111),
            ],
            time_bins: Some(4),
        };
        let probs = SplitProbs::with_time(2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let t = sample_tree(&space, &probs, &prior, None, &mut rng);
            assert!(t.is_valid(&space));
            assert!(log_tree_prior(&t, &space, &probs, &prior).is_finite());
        }
    }
}
