//! Least-squares regression trees with cost-complexity pruning, used to
//! summarise posterior mean fits as interpretable subgroups.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, CovariateSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub max_depth: usize,
    /// Smallest node size; `max(20, N/100)` when absent.
    pub min_node_size: Option<usize>,
    /// Complexity parameter, relative to the root sum of squares.
    pub cp: f64,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_node_size: None,
            cp: 0.01,
        }
    }
}

impl CartConfig {
    pub fn min_node_size_for(&self, n: usize) -> usize {
        self.min_node_size.unwrap_or((n / 100).max(20)).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CartSplit {
    /// `x[var] <= threshold` goes left.
    Numeric { var: usize, threshold: f64 },
    /// Levels in the `left` mask go left.
    Categorical { var: usize, left: u64 },
}

impl CartSplit {
    pub fn var(&self) -> usize {
        match *self {
            CartSplit::Numeric { var, .. } | CartSplit::Categorical { var, .. } => var,
        }
    }

    pub fn goes_left(&self, x: &[f64]) -> bool {
        match *self {
            CartSplit::Numeric { var, threshold } => x[var] <= threshold,
            CartSplit::Categorical { var, left } => (left >> (x[var] as u32)) & 1 == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartNode {
    pub mean: f64,
    pub size: usize,
    /// Sum of squared deviations from `mean`.
    pub sse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<CartBranch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartBranch {
    pub rule: CartSplit,
    /// Reduction in the sum of squares achieved by this split.
    pub gain: f64,
    pub left: Box<CartNode>,
    pub right: Box<CartNode>,
}

impl CartNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn leaf_count(&self) -> usize {
        match &self.split {
            None => 1,
            Some(b) => b.left.leaf_count() + b.right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match &self.split {
            None => 0,
            Some(b) => 1 + b.left.depth().max(b.right.depth()),
        }
    }

    /// Sum of leaf SSEs in this subtree.
    pub fn subtree_sse(&self) -> f64 {
        match &self.split {
            None => self.sse,
            Some(b) => b.left.subtree_sse() + b.right.subtree_sse(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        while let Some(b) = &node.split {
            node = if b.rule.goes_left(x) { &b.left } else { &b.right };
        }
        node.mean
    }

    fn visit_branches<'a>(&'a self, f: &mut impl FnMut(&'a CartBranch)) {
        if let Some(b) = &self.split {
            f(b);
            b.left.visit_branches(f);
            b.right.visit_branches(f);
        }
    }
}

/// One step of the pruning sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    /// Complexity at which the weakest link was collapsed.
    pub alpha: f64,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: CartNode,
    pub min_node_size: usize,
    pub prune_trace: Vec<PruneStep>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.root.predict(x)
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }
}

/// Best split of the points `idx` by exhaustive search, as
/// `(gain, rule)`. Numeric thresholds are midpoints between consecutive
/// distinct values; categorical levels are ordered by their mean response.
/// Ties go to the smaller variable index, then the smaller threshold.
pub fn best_split(
    x: &[&[f64]],
    y: &[f64],
    idx: &[usize],
    covariates: &[CovariateSpec],
    min_node_size: usize,
) -> Option<(f64, CartSplit)> {
    let n = idx.len();
    if n < 2 * min_node_size {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    let tol = 1e-12 * parent_sse.abs().max(1e-300);
    let mut best: Option<(f64, CartSplit)> = None;
    let consider = |gain: f64, rule: CartSplit, best: &mut Option<(f64, CartSplit)>| {
        if gain > tol && best.is_none_or(|(g, _)| gain > g + tol) {
            *best = Some((gain, rule));
        }
    };
    for (var, spec) in covariates.iter().enumerate() {
        // (sort key, response) pairs.
        let mut keyed: Vec<(f64, f64, f64)> = match spec.kind {
            CovariateKind::Numeric => idx.iter().map(|&i| (x[i][var], x[i][var], y[i])).collect(),
            CovariateKind::Categorical { levels } => {
                let mut sums = vec![0.0; levels as usize];
                let mut counts = vec![0usize; levels as usize];
                for &i in idx {
                    let l = x[i][var] as usize;
                    sums[l] += y[i];
                    counts[l] += 1;
                }
                idx.iter()
                    .map(|&i| {
                        let l = x[i][var] as usize;
                        (sums[l] / counts[l] as f64, l as f64, y[i])
                    })
                    .collect()
            }
        };
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..n - 1 {
            left_sum += keyed[k].2;
            left_sq += keyed[k].2 * keyed[k].2;
            // Only split between distinct values of the ordering variable.
            if keyed[k].1 == keyed[k + 1].1 {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_node_size || nr < min_node_size {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl as f64)
                + (right_sq - right_sum * right_sum / nr as f64);
            let gain = parent_sse - sse;
            let rule = match spec.kind {
                CovariateKind::Numeric => CartSplit::Numeric {
                    var,
                    threshold: 0.5 * (keyed[k].1 + keyed[k + 1].1),
                },
                CovariateKind::Categorical { .. } => {
                    let mut left = 0u64;
                    for item in &keyed[..nl] {
                        left |= 1u64 << (item.1 as u32);
                    }
                    CartSplit::Categorical { var, left }
                }
            };
            consider(gain, rule, &mut best);
        }
    }
    best
}

fn make_node(y: &[f64], idx: &[usize]) -> CartNode {
    let n = idx.len();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let sse = idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
    CartNode {
        mean,
        size: n,
        sse,
        split: None,
    }
}

fn grow(
    x: &[&[f64]],
    y: &[f64],
    idx: &[usize],
    covariates: &[CovariateSpec],
    min_node_size: usize,
    depth_left: usize,
) -> CartNode {
    let mut node = make_node(y, idx);
    if depth_left == 0 {
        return node;
    }
    if let Some((_, rule)) = best_split(x, y, idx, covariates, min_node_size) {
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rule.goes_left(x[i]));
        let left = grow(x, y, &l, covariates, min_node_size, depth_left - 1);
        let right = grow(x, y, &r, covariates, min_node_size, depth_left - 1);
        let gain = node.sse - left.sse - right.sse;
        node.split = Some(CartBranch {
            rule,
            gain,
            left: Box::new(left),
            right: Box::new(right),
        });
    }
    node
}

/// `(g, path)` of the weakest link: the branch minimising
/// `(R(t) − R(T_t)) / (|T_t| − 1)`, first in pre-order on ties.
fn weakest_link(node: &CartNode, path: &mut Vec<bool>, best: &mut Option<(f64, Vec<bool>)>) {
    if let Some(b) = &node.split {
        let g = (node.sse - node.subtree_sse()) / (node.leaf_count() - 1) as f64;
        if best.as_ref().is_none_or(|(bg, _)| g < *bg) {
            *best = Some((g, path.clone()));
        }
        path.push(false);
        weakest_link(&b.left, path, best);
        path.pop();
        path.push(true);
        weakest_link(&b.right, path, best);
        path.pop();
    }
}

fn collapse(node: &mut CartNode, path: &[bool]) {
    match path.split_first() {
        None => node.split = None,
        Some((&right, rest)) => {
            let b = node.split.as_mut().expect("path follows branches");
            collapse(if right { &mut b.right } else { &mut b.left }, rest);
        }
    }
}

/// Fit a pruned least-squares tree of `y` on `x`.
pub fn fit_cart(
    x: &[&[f64]],
    y: &[f64],
    covariates: &[CovariateSpec],
    config: &CartConfig,
) -> Result<RegressionTree> {
    let n = y.len();
    if n == 0 || x.len() != n {
        return Err(Error::invalid("CART needs matching, non-empty x and y"));
    }
    let min_node_size = config.min_node_size_for(n);
    let idx: Vec<usize> = (0..n).collect();
    let mut root = grow(x, y, &idx, covariates, min_node_size, config.max_depth);
    let alpha = config.cp * root.sse;
    let mut trace = Vec::new();
    loop {
        let mut best = None;
        weakest_link(&root, &mut Vec::new(), &mut best);
        match best {
            Some((g, path)) if g <= alpha => {
                collapse(&mut root, &path);
                trace.push(PruneStep {
                    alpha: g,
                    leaves: root.leaf_count(),
                });
            }
            _ => break,
        }
    }
    Ok(RegressionTree {
        root,
        min_node_size,
        prune_trace: trace,
    })
}

/// Per-variable share of the total impurity reduction across the tree's
/// splits; all zeros for a root-only tree.
pub fn cart_importance(tree: &RegressionTree, num_covariates: usize) -> Vec<f64> {
    let mut imp = vec![0.0; num_covariates];
    tree.root.visit_branches(&mut |b| imp[b.rule.var()] += b.gain);
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}
