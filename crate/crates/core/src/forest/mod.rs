//! Sum-of-trees ensembles and their priors and proposals.

mod prior;
mod proposal;
mod tree;

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use prior::{
    log_tree_prior, rule_log_prior, sample_rule, sample_tree, solve_leaf_prior, SplitProbs,
    TreePrior,
};
pub use proposal::{
    birth_log_q, death_log_q, grow, move_probability, propose, prune, MoveKind, Proposal,
    BIRTH_PROB, CHANGE_PROB, DEATH_PROB, SWAP_PROB,
};
pub use tree::{Coord, Domain, FlatTree, Path, Region, SplitRule, SplitSpace, TreeNode};

use crate::stats::sample_beta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
}

impl Forest {
    /// `m` single-leaf trees with zero leaf values.
    pub fn stumps(m: usize) -> Self {
        Self {
            trees: alloc::vec![TreeNode::leaf(0.0); m],
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// `r(x, bin)`: the sum of the trees' leaf values.
    pub fn eval(&self, x: &[f64], bin: Option<usize>) -> f64 {
        self.trees.iter().map(|t| t.eval(x, bin)).sum()
    }

    /// Total number of branches splitting on the time coordinate, and on
    /// anything else.
    pub fn split_counts(&self) -> (usize, usize) {
        let mut time = 0;
        let mut other = 0;
        for t in &self.trees {
            for r in t.rules() {
                if matches!(r, SplitRule::Time { .. }) {
                    time += 1;
                } else {
                    other += 1;
                }
            }
        }
        (time, other)
    }

    pub fn uses_time(&self) -> bool {
        self.trees.iter().any(TreeNode::uses_time)
    }

    /// Sum over branches of `ln Σ_{available c} s_c`, the normaliser of the
    /// coordinate choice at each branch.
    pub fn log_choice_normalisers(&self, space: &SplitSpace, probs: &SplitProbs) -> f64 {
        fn go(node: &TreeNode, region: &Region, probs: &SplitProbs, acc: &mut f64) {
            if let TreeNode::Branch { rule, left, right } = node {
                *acc += probs.available(region).1.ln();
                let (l, r) = region.split(rule);
                go(left, &l, probs, acc);
                go(right, &r, probs, acc);
            }
        }
        let mut acc = 0.0;
        let root = space.root();
        for t in &self.trees {
            go(t, &root, probs, &mut acc);
        }
        acc
    }
}

/// Outcome of one update of the time-coordinate probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaUpdate {
    pub omega: f64,
    pub accepted: bool,
}

/// Update `omega ~ Beta(1/p, 1)` given the forest's current splits.
///
/// The candidate is drawn from `Beta(1/p + n_time, 1 + n_other)`, the full
/// conditional if every coordinate could split every branch. It is accepted
/// with the ratio of the per-branch choice normalisers, which corrects for
/// branches where some coordinate is exhausted; that ratio is one whenever
/// no coordinate is.
pub fn update_omega<R: Rng + ?Sized>(
    forest: &Forest,
    space: &SplitSpace,
    p: usize,
    omega: f64,
    rng: &mut R,
) -> OmegaUpdate {
    let (n_time, n_other) = forest.split_counts();
    let prior_shape = 1.0 / p.max(1) as f64;
    let candidate = sample_beta(rng, prior_shape + n_time as f64, 1.0 + n_other as f64);
    if !(candidate > 0.0 && candidate < 1.0) {
        return OmegaUpdate {
            omega,
            accepted: false,
        };
    }
    let current = forest.log_choice_normalisers(space, &SplitProbs::with_time(p, omega));
    let proposed = forest.log_choice_normalisers(space, &SplitProbs::with_time(p, candidate));
    let log_alpha = current - proposed;
    if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
        OmegaUpdate {
            omega: candidate,
            accepted: true,
        }
    } else {
        OmegaUpdate {
            omega,
            accepted: false,
        }
    }
}

/// Draw `omega` from its `Beta(1/p, 1)` prior.
pub fn sample_omega_prior<R: Rng + ?Sized>(p: usize, rng: &mut R) -> f64 {
    sample_beta(rng, 1.0 / p.max(1) as f64, 1.0)
}
