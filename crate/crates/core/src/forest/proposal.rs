//! Metropolis-Hastings tree proposals: Birth, Death, Change and Swap.

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::{rule_log_prior, sample_rule, SplitProbs};
use super::tree::{SplitRule, SplitSpace, TreeNode};

pub const BIRTH_PROB: f64 = 0.25;
pub const DEATH_PROB: f64 = 0.25;
pub const CHANGE_PROB: f64 = 0.40;
pub const SWAP_PROB: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Birth,
    Death,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Change,
        MoveKind::Swap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::Change => "change",
            MoveKind::Swap => "swap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    /// Proposed tree, or `None` when the move was rejected outright because
    /// it would create an empty region or had nothing to act on.
    pub tree: Option<TreeNode>,
    /// `ln Q(T' → T) − ln Q(T → T')`.
    pub log_ratio: f64,
    pub kind: MoveKind,
}

impl Proposal {
    fn rejected(kind: MoveKind) -> Self {
        Self {
            tree: None,
            log_ratio: f64::NEG_INFINITY,
            kind,
        }
    }
}

/// Move-type probabilities for a tree; a lone leaf can only grow.
pub fn move_probability(tree: &TreeNode, kind: MoveKind) -> f64 {
    if tree.is_leaf() {
        if kind == MoveKind::Birth {
            1.0
        } else {
            0.0
        }
    } else {
        match kind {
            MoveKind::Birth => BIRTH_PROB,
            MoveKind::Death => DEATH_PROB,
            MoveKind::Change => CHANGE_PROB,
            MoveKind::Swap => SWAP_PROB,
        }
    }
}

/// `ln Q(T → T')` for growing the leaf at `path` with `rule`.
pub fn birth_log_q(tree: &TreeNode, path: &[bool], rule: &SplitRule, space: &SplitSpace, probs: &SplitProbs) -> f64 {
    let region = tree.region_at(path, space);
    move_probability(tree, MoveKind::Birth).ln() - (tree.leaf_count() as f64).ln()
        + rule_log_prior(rule, &region, probs)
}

/// `ln Q(T → T')` for pruning the two-leaf branch at `path`.
pub fn death_log_q(tree: &TreeNode, path: &[bool]) -> f64 {
    debug_assert!(tree.nog_paths().iter().any(|p| p == path));
    move_probability(tree, MoveKind::Death).ln() - (tree.nog_paths().len() as f64).ln()
}

/// Replace the leaf at `path` with a branch on `rule`.
pub fn grow(tree: &TreeNode, path: &[bool], rule: SplitRule) -> TreeNode {
    let mut out = tree.clone();
    *out.node_at_mut(path) = TreeNode::branch(rule, TreeNode::leaf(0.0), TreeNode::leaf(0.0));
    out
}

/// Collapse the branch at `path` into a leaf.
pub fn prune(tree: &TreeNode, path: &[bool]) -> TreeNode {
    let mut out = tree.clone();
    *out.node_at_mut(path) = TreeNode::leaf(0.0);
    out
}

/// Draw one proposal from the move mixture.
pub fn propose<R: Rng + ?Sized>(
    tree: &TreeNode,
    space: &SplitSpace,
    probs: &SplitProbs,
    rng: &mut R,
) -> Proposal {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut kind = MoveKind::Birth;
    for k in MoveKind::ALL {
        acc += move_probability(tree, k);
        if u < acc {
            kind = k;
            break;
        }
    }
    match kind {
        MoveKind::Birth => propose_birth(tree, space, probs, rng),
        MoveKind::Death => propose_death(tree, space, probs, rng),
        MoveKind::Change => propose_change(tree, space, probs, rng),
        MoveKind::Swap => propose_swap(tree, space, rng),
    }
}

fn pick<R: Rng + ?Sized, T: Clone>(items: &[T], rng: &mut R) -> Option<T> {
    if items.is_empty() {
        None
    } else {
        Some(items[rng.random_range(0..items.len())].clone())
    }
}

fn propose_birth<R: Rng + ?Sized>(
    tree: &TreeNode,
    space: &SplitSpace,
    probs: &SplitProbs,
    rng: &mut R,
) -> Proposal {
    let path = pick(&tree.leaf_paths(), rng).expect("trees have at least one leaf");
    let region = tree.region_at(&path, space);
    let Some(coord) = probs.sample_coord(&region, rng) else {
        return Proposal::rejected(MoveKind::Birth);
    };
    let rule = sample_rule(coord, &region, rng);
    let grown = grow(tree, &path, rule);
    let log_ratio = death_log_q(&grown, &path) - birth_log_q(tree, &path, &rule, space, probs);
    Proposal {
        tree: Some(grown),
        log_ratio,
        kind: MoveKind::Birth,
    }
}

fn propose_death<R: Rng + ?Sized>(
    tree: &TreeNode,
    space: &SplitSpace,
    probs: &SplitProbs,
    rng: &mut R,
) -> Proposal {
    let Some(path) = pick(&tree.nog_paths(), rng) else {
        return Proposal::rejected(MoveKind::Death);
    };
    let TreeNode::Branch { rule, .. } = tree.node_at(&path) else {
        unreachable!("nog paths point at branches");
    };
    let rule = *rule;
    let pruned = prune(tree, &path);
    let log_ratio = birth_log_q(&pruned, &path, &rule, space, probs) - death_log_q(tree, &path);
    Proposal {
        tree: Some(pruned),
        log_ratio,
        kind: MoveKind::Death,
    }
}

fn propose_change<R: Rng + ?Sized>(
    tree: &TreeNode,
    space: &SplitSpace,
    probs: &SplitProbs,
    rng: &mut R,
) -> Proposal {
    let Some(path) = pick(&tree.branch_paths(), rng) else {
        return Proposal::rejected(MoveKind::Change);
    };
    let region = tree.region_at(&path, space);
    let Some(coord) = probs.sample_coord(&region, rng) else {
        return Proposal::rejected(MoveKind::Change);
    };
    let new_rule = sample_rule(coord, &region, rng);
    let mut changed = tree.clone();
    let node = changed.node_at_mut(&path);
    let TreeNode::Branch { rule, .. } = node else {
        unreachable!("branch paths point at branches");
    };
    let old_rule = core::mem::replace(rule, new_rule);
    if !node.is_valid_in(&region) {
        return Proposal::rejected(MoveKind::Change);
    }
    // Branch count, and so the node-selection probability, is unchanged.
    let log_ratio =
        rule_log_prior(&old_rule, &region, probs) - rule_log_prior(&new_rule, &region, probs);
    Proposal {
        tree: Some(changed),
        log_ratio,
        kind: MoveKind::Change,
    }
}

fn propose_swap<R: Rng + ?Sized>(tree: &TreeNode, space: &SplitSpace, rng: &mut R) -> Proposal {
    let Some((path, child_right)) = pick(&tree.swap_pairs(), rng) else {
        return Proposal::rejected(MoveKind::Swap);
    };
    let region = tree.region_at(&path, space);
    let mut swapped = tree.clone();
    let parent = swapped.node_at_mut(&path);
    let TreeNode::Branch { rule: parent_rule, left, right } = parent else {
        unreachable!("swap pairs point at branches");
    };
    let (child, other) = if child_right {
        (right, left)
    } else {
        (left, right)
    };
    let TreeNode::Branch { rule: child_rule, .. } = child.as_mut() else {
        unreachable!("swap children are branches");
    };
    let p_rule = *parent_rule;
    let c_rule = *child_rule;
    let sibling_matches = matches!(other.as_ref(), TreeNode::Branch { rule, .. } if *rule == c_rule);
    *parent_rule = c_rule;
    *child_rule = p_rule;
    if sibling_matches {
        if let TreeNode::Branch { rule, .. } = other.as_mut() {
            *rule = p_rule;
        }
    } else if matches!(other.as_ref(), TreeNode::Branch { rule, .. } if *rule == p_rule) {
        // The reverse move would swap both children and not return here.
        return Proposal::rejected(MoveKind::Swap);
    }
    if !parent.is_valid_in(&region) {
        return Proposal::rejected(MoveKind::Swap);
    }
    Proposal {
        tree: Some(swapped),
        log_ratio: 0.0,
        kind: MoveKind::Swap,
    }
}
