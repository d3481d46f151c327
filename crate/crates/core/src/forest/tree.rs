//! Tree topology, splitting rules and the hyper-rectangles they carve out.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, Dataset};

/// A splitting rule. Observations satisfying the rule go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// `x[var] <= cut`.
    Numeric { var: usize, cut: f64 },
    /// `x[var]` is one of the levels set in the `left` bit mask.
    Categorical { var: usize, left: u64 },
    /// Time-bin pseudo-covariate: `bin <= cut`.
    Time { cut: usize },
}

impl SplitRule {
    pub fn coord(&self) -> Coord {
        match *self {
            SplitRule::Numeric { var, .. } | SplitRule::Categorical { var, .. } => {
                Coord::Covariate(var)
            }
            SplitRule::Time { .. } => Coord::Time,
        }
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64], bin: Option<usize>) -> bool {
        match *self {
            SplitRule::Numeric { var, cut } => x[var] <= cut,
            SplitRule::Categorical { var, left } => (left >> (x[var] as u32)) & 1 == 1,
            SplitRule::Time { cut } => bin.is_none_or(|b| b <= cut),
        }
    }
}

/// A splitting coordinate: one of the covariates or the time bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Coord {
    Covariate(usize),
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Continuous interval of admissible cutpoints.
    Interval { lo: f64, hi: f64 },
    /// Bit mask of admissible levels.
    Levels(u64),
}

/// The root hyper-rectangle: observed covariate ranges, every declared
/// level, and (in non-proportional mode) the bins `0..bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpace {
    pub covariates: Vec<Domain>,
    pub time_bins: Option<usize>,
}

impl SplitSpace {
    pub fn from_dataset(data: &Dataset, time_bins: Option<usize>) -> Self {
        let covariates = data
            .covariates()
            .iter()
            .enumerate()
            .map(|(j, spec)| match spec.kind {
                CovariateKind::Numeric => {
                    let (lo, hi) = data.subjects().iter().fold(
                        (f64::INFINITY, f64::NEG_INFINITY),
                        |(lo, hi), s| (lo.min(s.x[j]), hi.max(s.x[j])),
                    );
                    Domain::Interval { lo, hi }
                }
                CovariateKind::Categorical { levels } => Domain::Levels(full_mask(levels)),
            })
            .collect();
        Self {
            covariates,
            time_bins,
        }
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn root(&self) -> Region {
        Region {
            bounds: self.covariates.clone(),
            bins: self.time_bins.map(|b| (0, b.saturating_sub(1))),
        }
    }
}

pub(crate) fn full_mask(levels: u32) -> u64 {
    if levels >= 64 {
        u64::MAX
    } else {
        (1u64 << levels) - 1
    }
}

/// Hyper-rectangle of inputs reaching a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub bounds: Vec<Domain>,
    /// Inclusive range of time bins, when the time coordinate exists.
    pub bins: Option<(usize, usize)>,
}

impl Region {
    /// Whether some rule on `coord` splits this region into two non-empty
    /// parts.
    pub fn splittable(&self, coord: Coord) -> bool {
        match coord {
            Coord::Covariate(j) => match self.bounds[j] {
                Domain::Interval { lo, hi } => hi > lo,
                Domain::Levels(mask) => mask.count_ones() >= 2,
            },
            Coord::Time => self.bins.is_some_and(|(lo, hi)| hi > lo),
        }
    }

    /// Whether `rule` leaves both children logically non-empty.
    pub fn admits(&self, rule: &SplitRule) -> bool {
        match *rule {
            SplitRule::Numeric { var, cut } => match self.bounds.get(var) {
                Some(Domain::Interval { lo, hi }) => *lo < cut && cut < *hi,
                _ => false,
            },
            SplitRule::Categorical { var, left } => match self.bounds.get(var) {
                Some(Domain::Levels(mask)) => {
                    left != 0 && left & !mask == 0 && left != *mask
                }
                _ => false,
            },
            SplitRule::Time { cut } => self.bins.is_some_and(|(lo, hi)| lo <= cut && cut < hi),
        }
    }

    /// Log density of `rule` among the rules on its coordinate: uniform
    /// cutpoint over the interval, uniform non-empty proper level subset,
    /// or uniform bin threshold.
    pub fn rule_log_density(&self, rule: &SplitRule) -> f64 {
        match *rule {
            SplitRule::Numeric { var, .. } => match self.bounds[var] {
                Domain::Interval { lo, hi } => -(hi - lo).ln(),
                Domain::Levels(_) => f64::NEG_INFINITY,
            },
            SplitRule::Categorical { var, .. } => match self.bounds[var] {
                Domain::Levels(mask) => -(proper_subset_count(mask.count_ones())).ln(),
                Domain::Interval { .. } => f64::NEG_INFINITY,
            },
            SplitRule::Time { .. } => match self.bins {
                Some((lo, hi)) => -((hi - lo) as f64).ln(),
                None => f64::NEG_INFINITY,
            },
        }
    }

    /// Regions of the left and right children under `rule`.
    pub fn split(&self, rule: &SplitRule) -> (Region, Region) {
        let mut left = self.clone();
        let mut right = self.clone();
        match *rule {
            SplitRule::Numeric { var, cut } => {
                if let Domain::Interval { lo, hi } = self.bounds[var] {
                    left.bounds[var] = Domain::Interval { lo, hi: cut };
                    right.bounds[var] = Domain::Interval { lo: cut, hi };
                }
            }
            SplitRule::Categorical { var, left: set } => {
                if let Domain::Levels(mask) = self.bounds[var] {
                    left.bounds[var] = Domain::Levels(mask & set);
                    right.bounds[var] = Domain::Levels(mask & !set);
                }
            }
            SplitRule::Time { cut } => {
                if let Some((lo, hi)) = self.bins {
                    left.bins = Some((lo, cut));
                    right.bins = Some((cut + 1, hi));
                }
            }
        }
        (left, right)
    }
}

fn proper_subset_count(k: u32) -> f64 {
    2f64.powi(k as i32) - 2.0
}

/// Side of a child relative to its parent, used in node paths.
pub type Path = Vec<bool>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        mu: f64,
    },
    Branch {
        rule: SplitRule,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(mu: f64) -> Self {
        TreeNode::Leaf { mu }
    }

    pub fn branch(rule: SplitRule, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Branch {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Leaf value reached by `(x, bin)`.
    pub fn eval(&self, x: &[f64], bin: Option<usize>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { mu } => return *mu,
                TreeNode::Branch { rule, left, right } => {
                    node = if rule.goes_left(x, bin) { left } else { right };
                }
            }
        }
    }

    /// Depth-first (left before right) index of the leaf reached by `(x, bin)`.
    pub fn leaf_index(&self, x: &[f64], bin: Option<usize>) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return offset,
                TreeNode::Branch { rule, left, right } => {
                    if rule.goes_left(x, bin) {
                        node = left;
                    } else {
                        offset += left.leaf_count();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Branch { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn branch_count(&self) -> usize {
        self.leaf_count() - 1
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Branch { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf values in depth-first order.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |mu| out.push(mu));
        out
    }

    fn visit_leaves(&self, f: &mut impl FnMut(f64)) {
        match self {
            TreeNode::Leaf { mu } => f(*mu),
            TreeNode::Branch { left, right, .. } => {
                left.visit_leaves(f);
                right.visit_leaves(f);
            }
        }
    }

    /// Overwrite leaf values in depth-first order.
    pub fn set_leaf_values(&mut self, values: &[f64]) {
        fn go(node: &mut TreeNode, values: &[f64], next: &mut usize) {
            match node {
                TreeNode::Leaf { mu } => {
                    *mu = values[*next];
                    *next += 1;
                }
                TreeNode::Branch { left, right, .. } => {
                    go(left, values, next);
                    go(right, values, next);
                }
            }
        }
        let mut next = 0;
        go(self, values, &mut next);
        debug_assert_eq!(next, values.len());
    }

    /// Every splitting rule, depth-first.
    pub fn rules(&self) -> Vec<SplitRule> {
        let mut out = Vec::new();
        fn go(node: &TreeNode, out: &mut Vec<SplitRule>) {
            if let TreeNode::Branch { rule, left, right } = node {
                out.push(*rule);
                go(left, out);
                go(right, out);
            }
        }
        go(self, &mut out);
        out
    }

    pub fn node_at(&self, path: &[bool]) -> &TreeNode {
        let mut node = self;
        for &right_side in path {
            match node {
                TreeNode::Branch { left, right, .. } => {
                    node = if right_side { right } else { left };
                }
                TreeNode::Leaf { .. } => panic!("path descends past a leaf"),
            }
        }
        node
    }

    pub fn node_at_mut(&mut self, path: &[bool]) -> &mut TreeNode {
        let mut node = self;
        for &right_side in path {
            match node {
                TreeNode::Branch { left, right, .. } => {
                    node = if right_side { right } else { left };
                }
                TreeNode::Leaf { .. } => panic!("path descends past a leaf"),
            }
        }
        node
    }

    /// Region of the node at `path`; its depth is `path.len()`.
    pub fn region_at(&self, path: &[bool], space: &SplitSpace) -> Region {
        let mut region = space.root();
        let mut node = self;
        for &right_side in path {
            match node {
                TreeNode::Branch { rule, left, right } => {
                    let (l, r) = region.split(rule);
                    if right_side {
                        region = r;
                        node = right;
                    } else {
                        region = l;
                        node = left;
                    }
                }
                TreeNode::Leaf { .. } => panic!("path descends past a leaf"),
            }
        }
        region
    }

    fn collect_paths(&self, keep: &impl Fn(&TreeNode) -> bool) -> Vec<Path> {
        let mut out = Vec::new();
        let mut stack: Vec<(Path, &TreeNode)> = vec![(Vec::new(), self)];
        while let Some((path, node)) = stack.pop() {
            if keep(node) {
                out.push(path.clone());
            }
            if let TreeNode::Branch { left, right, .. } = node {
                let mut rp = path.clone();
                rp.push(true);
                stack.push((rp, right));
                let mut lp = path;
                lp.push(false);
                stack.push((lp, left));
            }
        }
        out
    }

    pub fn leaf_paths(&self) -> Vec<Path> {
        self.collect_paths(&|n| n.is_leaf())
    }

    pub fn branch_paths(&self) -> Vec<Path> {
        self.collect_paths(&|n| !n.is_leaf())
    }

    /// Branches whose two children are both leaves.
    pub fn nog_paths(&self) -> Vec<Path> {
        self.collect_paths(&|n| match n {
            TreeNode::Branch { left, right, .. } => left.is_leaf() && right.is_leaf(),
            TreeNode::Leaf { .. } => false,
        })
    }

    /// `(parent, child_is_right)` pairs where both parent and child branch.
    pub fn swap_pairs(&self) -> Vec<(Path, bool)> {
        let mut out = Vec::new();
        for path in self.branch_paths() {
            if let TreeNode::Branch { left, right, .. } = self.node_at(&path) {
                if !left.is_leaf() {
                    out.push((path.clone(), false));
                }
                if !right.is_leaf() {
                    out.push((path, true));
                }
            }
        }
        out
    }

    /// Whether every rule in the subtree splits its region into two
    /// non-empty parts.
    pub fn is_valid_in(&self, region: &Region) -> bool {
        match self {
            TreeNode::Leaf { mu } => mu.is_finite(),
            TreeNode::Branch { rule, left, right } => {
                if !region.admits(rule) {
                    return false;
                }
                let (l, r) = region.split(rule);
                left.is_valid_in(&l) && right.is_valid_in(&r)
            }
        }
    }

    pub fn is_valid(&self, space: &SplitSpace) -> bool {
        self.is_valid_in(&space.root())
    }

    /// Whether the tree uses the time-bin coordinate anywhere.
    pub fn uses_time(&self) -> bool {
        self.rules().iter().any(|r| matches!(r, SplitRule::Time { .. }))
    }
}

/// Array form of a tree for fast repeated traversal; leaves are numbered
/// depth-first.
#[derive(Debug, Clone)]
pub struct FlatTree {
    nodes: Vec<FlatNode>,
    leaves: usize,
}

#[derive(Debug, Clone, Copy)]
enum FlatNode {
    Leaf(u32),
    Split { rule: SplitRule, right: u32 },
}

impl FlatTree {
    pub fn new(tree: &TreeNode) -> Self {
        fn go(node: &TreeNode, nodes: &mut Vec<FlatNode>, leaves: &mut u32) {
            match node {
                TreeNode::Leaf { .. } => {
                    nodes.push(FlatNode::Leaf(*leaves));
                    *leaves += 1;
                }
                TreeNode::Branch { rule, left, right } => {
                    let at = nodes.len();
                    nodes.push(FlatNode::Split {
                        rule: *rule,
                        right: 0,
                    });
                    go(left, nodes, leaves);
                    let right_at = nodes.len() as u32;
                    if let FlatNode::Split { right: r, .. } = &mut nodes[at] {
                        *r = right_at;
                    }
                    go(right, nodes, leaves);
                }
            }
        }
        let mut nodes = Vec::new();
        let mut leaves = 0;
        go(tree, &mut nodes, &mut leaves);
        Self {
            nodes,
            leaves: leaves as usize,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    /// Left children are stored immediately after their parent.
    #[inline]
    pub fn leaf_of(&self, x: &[f64], bin: Option<usize>) -> usize {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                FlatNode::Leaf(id) => return id as usize,
                FlatNode::Split { rule, right } => {
                    at = if rule.goes_left(x, bin) {
                        at + 1
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}
