//! Binary regression trees: evaluation, partition validity, and topology
//! statistics kept incrementally up to date under the four MCMC moves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Axis-aligned splitting rule: `x[predictor] <= threshold` routes LEFT
/// (the boundary is inclusive on the left branch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub predictor: usize,
    pub threshold: f64,
}

impl SplitRule {
    pub fn new(predictor: usize, threshold: f64) -> Self {
        Self { predictor, threshold }
    }

    /// True when `x` takes the left branch.
    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        assert!(
            self.predictor < x.len(),
            "split on predictor {} but observation has {} coordinates",
            self.predictor,
            x.len()
        );
        x[self.predictor] <= self.threshold
    }
}

/// Topology summary: leaf count, root imbalance, and maximum node depth.
///
/// `delta` is the absolute difference between the leaf counts of the root's
/// left and right subtrees; it is 0 for a single-leaf tree. For `n_leaves >= 2`
/// it always lies in `0..=n_leaves - 2` and has the same parity as `n_leaves`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub n_leaves: u32,
    pub delta: u32,
    pub depth: u32,
}

impl TreeStats {
    pub fn new(n_leaves: u32, delta: u32, depth: u32) -> Self {
        Self { n_leaves, delta, depth }
    }
}

/// Kinds of Metropolis-Hastings topology moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Swap,
    Change,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Swap, MoveKind::Change];

    pub fn name(&self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Swap => "swap",
            MoveKind::Change => "change",
        }
    }
}

/// A fully specified topology move.
///
/// `node` is the leaf to split (GROW), the internal node whose children are
/// both leaves (PRUNE), the internal node whose rule is replaced (CHANGE), or
/// the internal CHILD of the parent-child pair whose rules are exchanged
/// (SWAP). `rule` is present exactly for GROW and CHANGE.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveDescriptor {
    pub kind: MoveKind,
    pub node: usize,
    pub rule: Option<SplitRule>,
}

impl MoveDescriptor {
    pub fn grow(node: usize, rule: SplitRule) -> Self {
        Self { kind: MoveKind::Grow, node, rule: Some(rule) }
    }

    pub fn prune(node: usize) -> Self {
        Self { kind: MoveKind::Prune, node, rule: None }
    }

    pub fn swap(child: usize) -> Self {
        Self { kind: MoveKind::Swap, node: child, rule: None }
    }

    pub fn change(node: usize, rule: SplitRule) -> Self {
        Self { kind: MoveKind::Change, node, rule: Some(rule) }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoveError {
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("GROW target {0} is not a leaf")]
    GrowTargetNotLeaf(usize),
    #[error("PRUNE target {0} does not have two leaf children")]
    PruneTargetNotPrunable(usize),
    #[error("CHANGE target {0} is not internal")]
    ChangeTargetNotInternal(usize),
    #[error("SWAP child {0} is not internal or has no internal parent")]
    SwapPairInvalid(usize),
    #[error("{0:?} move requires a splitting rule")]
    MissingRule(MoveKind),
}

#[derive(Debug, Clone, PartialEq)]
enum NodeBody {
    Internal { rule: SplitRule, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    parent: Option<usize>,
    depth: u32,
    /// Number of leaves in the subtree rooted here (1 for a leaf).
    subtree_leaves: u32,
    body: NodeBody,
}

/// Rooted binary tree stored as an index-based node arena.
///
/// Freed slots (from PRUNE) are recycled, so node ids are stable but not
/// meaningful across trees; equality compares structure, not slot layout.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: usize,
    free: Vec<usize>,
    /// leaf_depth_count[d] = number of leaves at depth d.
    leaf_depth_count: Vec<u32>,
    stats: TreeStats,
}

impl Tree {
    /// The single-leaf tree carrying `value`.
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node {
                parent: None,
                depth: 0,
                subtree_leaves: 1,
                body: NodeBody::Leaf { value },
            }],
            root: 0,
            free: Vec::new(),
            leaf_depth_count: vec![1],
            stats: TreeStats::new(1, 0, 0),
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].body, NodeBody::Leaf { .. })
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].body {
            NodeBody::Internal { left, right, .. } => Some((left, right)),
            NodeBody::Leaf { .. } => None,
        }
    }

    pub fn rule(&self, id: usize) -> Option<SplitRule> {
        match self.nodes[id].body {
            NodeBody::Internal { rule, .. } => Some(rule),
            NodeBody::Leaf { .. } => None,
        }
    }

    pub fn leaf_value(&self, id: usize) -> Option<f64> {
        match self.nodes[id].body {
            NodeBody::Leaf { value } => Some(value),
            NodeBody::Internal { .. } => None,
        }
    }

    pub fn node_depth(&self, id: usize) -> u32 {
        self.nodes[id].depth
    }

    fn exists(&self, id: usize) -> bool {
        id < self.nodes.len() && !self.free.contains(&id)
    }

    /// Live node ids in depth-first (left before right) order.
    pub fn node_ids(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let NodeBody::Internal { left, right, .. } = self.nodes[id].body {
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    /// Leaf ids in left-to-right order; this ordering defines the leaf
    /// indices used by partitions and leaf-value vectors.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.node_ids().into_iter().filter(|&id| self.is_leaf(id)).collect()
    }

    pub fn internal_ids(&self) -> Vec<usize> {
        self.node_ids().into_iter().filter(|&id| !self.is_leaf(id)).collect()
    }

    /// Internal nodes whose children are both leaves (PRUNE targets).
    pub fn prunable_ids(&self) -> Vec<usize> {
        self.internal_ids()
            .into_iter()
            .filter(|&id| {
                let (l, r) = self.children(id).expect("internal node");
                self.is_leaf(l) && self.is_leaf(r)
            })
            .collect()
    }

    /// Internal nodes whose parent is also internal (SWAP child targets).
    /// Every non-root internal node qualifies, since parents are internal
    /// by construction.
    pub fn swappable_child_ids(&self) -> Vec<usize> {
        self.internal_ids().into_iter().filter(|&id| self.nodes[id].parent.is_some()).collect()
    }

    /// Leaf values in left-to-right leaf order.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaf_ids()
            .into_iter()
            .map(|id| self.leaf_value(id).expect("leaf node"))
            .collect()
    }

    /// Overwrites leaf values in left-to-right leaf order.
    ///
    /// Panics if `values` does not have one entry per leaf.
    pub fn set_leaf_values(&mut self, values: &[f64]) {
        let ids = self.leaf_ids();
        assert_eq!(values.len(), ids.len(), "expected {} leaf values, got {}", ids.len(), values.len());
        for (id, &v) in ids.iter().zip(values) {
            self.nodes[*id].body = NodeBody::Leaf { value: v };
        }
    }

    /// Incrementally maintained topology statistics.
    pub fn cached_stats(&self) -> TreeStats {
        self.stats
    }

    /// Topology statistics recomputed from scratch by traversal, used to
    /// cross-check the incremental bookkeeping.
    pub fn stats(&self) -> TreeStats {
        fn walk(tree: &Tree, id: usize, depth: u32, max_depth: &mut u32) -> u32 {
            *max_depth = (*max_depth).max(depth);
            match tree.nodes[id].body {
                NodeBody::Leaf { .. } => 1,
                NodeBody::Internal { left, right, .. } => {
                    walk(tree, left, depth + 1, max_depth) + walk(tree, right, depth + 1, max_depth)
                }
            }
        }
        let mut max_depth = 0;
        let n_leaves = walk(self, self.root, 0, &mut max_depth);
        let delta = match self.nodes[self.root].body {
            NodeBody::Leaf { .. } => 0,
            NodeBody::Internal { left, right, .. } => {
                let mut d = 0;
                let l = walk(self, left, 1, &mut d);
                let r = walk(self, right, 1, &mut d);
                l.abs_diff(r)
            }
        };
        TreeStats::new(n_leaves, delta, max_depth)
    }

    /// Routes `x` to a leaf and returns its value.
    ///
    /// Panics if a rule's predictor index is out of bounds for `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.leaf_value(self.route(x)).expect("routing ends at a leaf")
    }

    /// The leaf node id that `x` routes to.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut id = self.root;
        loop {
            match &self.nodes[id].body {
                NodeBody::Leaf { .. } => return id,
                NodeBody::Internal { rule, left, right } => {
                    id = if rule.goes_left(x) { *left } else { *right };
                }
            }
        }
    }

    /// Leaf ordinal (position in `leaf_ids`) that each row of `X` routes to.
    pub fn leaf_memberships(&self, x: &Matrix) -> Vec<usize> {
        let ids = self.leaf_ids();
        let ordinal: std::collections::HashMap<usize, usize> =
            ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        x.rows().map(|row| ordinal[&self.route(row)]).collect()
    }

    /// Observation counts per leaf, in leaf order.
    pub fn leaf_counts(&self, x: &Matrix) -> Vec<u32> {
        let mut counts = vec![0u32; self.leaf_ids().len()];
        for m in self.leaf_memberships(x) {
            counts[m] += 1;
        }
        counts
    }

    /// Fraction of observations in each leaf cell, in leaf order; the
    /// underlying counts always sum to exactly `X.n_rows()`.
    pub fn cell_sizes(&self, x: &Matrix) -> Vec<f64> {
        let n = x.n_rows() as f64;
        self.leaf_counts(x).into_iter().map(|c| c as f64 / n).collect()
    }

    /// True iff every leaf holds at least `min_obs` observations.
    pub fn is_valid(&self, x: &Matrix, min_obs: u32) -> bool {
        self.leaf_counts(x).into_iter().all(|c| c >= min_obs)
    }

    /// Applies a topology move, returning the new tree and its incrementally
    /// updated statistics. The receiver is left untouched.
    pub fn apply_move(&self, mv: &MoveDescriptor) -> Result<(Tree, TreeStats), MoveError> {
        let mut tree = self.clone();
        tree.apply_move_in_place(mv)?;
        let stats = tree.cached_stats();
        Ok((tree, stats))
    }

    pub(crate) fn apply_move_in_place(&mut self, mv: &MoveDescriptor) -> Result<(), MoveError> {
        if !self.exists(mv.node) {
            return Err(MoveError::UnknownNode(mv.node));
        }
        match mv.kind {
            MoveKind::Grow => {
                let rule = mv.rule.ok_or(MoveError::MissingRule(MoveKind::Grow))?;
                self.grow(mv.node, rule)
            }
            MoveKind::Prune => self.prune(mv.node),
            MoveKind::Change => {
                let rule = mv.rule.ok_or(MoveError::MissingRule(MoveKind::Change))?;
                self.change(mv.node, rule)
            }
            MoveKind::Swap => self.swap(mv.node),
        }
    }

    fn grow(&mut self, id: usize, rule: SplitRule) -> Result<(), MoveError> {
        let value = self.leaf_value(id).ok_or(MoveError::GrowTargetNotLeaf(id))?;
        let depth = self.nodes[id].depth;
        let left = self.alloc(Node {
            parent: Some(id),
            depth: depth + 1,
            subtree_leaves: 1,
            body: NodeBody::Leaf { value },
        });
        let right = self.alloc(Node {
            parent: Some(id),
            depth: depth + 1,
            subtree_leaves: 1,
            body: NodeBody::Leaf { value },
        });
        self.nodes[id].body = NodeBody::Internal { rule, left, right };
        self.bump_leaf_depth(depth, -1);
        self.bump_leaf_depth(depth + 1, 2);
        self.adjust_subtree_leaves(id, 1);
        self.refresh_stats();
        Ok(())
    }

    fn prune(&mut self, id: usize) -> Result<(), MoveError> {
        let (left, right) = self.children(id).ok_or(MoveError::PruneTargetNotPrunable(id))?;
        if !(self.is_leaf(left) && self.is_leaf(right)) {
            return Err(MoveError::PruneTargetNotPrunable(id));
        }
        let value = self.leaf_value(left).expect("left child is a leaf");
        let depth = self.nodes[id].depth;
        self.nodes[id].body = NodeBody::Leaf { value };
        self.free.push(right);
        self.free.push(left);
        self.bump_leaf_depth(depth + 1, -2);
        self.bump_leaf_depth(depth, 1);
        self.adjust_subtree_leaves(id, -1);
        self.refresh_stats();
        Ok(())
    }

    fn change(&mut self, id: usize, new_rule: SplitRule) -> Result<(), MoveError> {
        match &mut self.nodes[id].body {
            NodeBody::Internal { rule, .. } => {
                *rule = new_rule;
                Ok(())
            }
            NodeBody::Leaf { .. } => Err(MoveError::ChangeTargetNotInternal(id)),
        }
    }

    fn swap(&mut self, child: usize) -> Result<(), MoveError> {
        let parent = self.nodes[child].parent.ok_or(MoveError::SwapPairInvalid(child))?;
        let child_rule = self.rule(child).ok_or(MoveError::SwapPairInvalid(child))?;
        let parent_rule = self.rule(parent).expect("parents are internal");
        self.change(child, parent_rule)?;
        self.change(parent, child_rule)?;
        Ok(())
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = node;
            id
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    fn bump_leaf_depth(&mut self, depth: u32, by: i32) {
        let d = depth as usize;
        if d >= self.leaf_depth_count.len() {
            self.leaf_depth_count.resize(d + 1, 0);
        }
        let c = self.leaf_depth_count[d] as i64 + by as i64;
        debug_assert!(c >= 0, "negative leaf count at depth {depth}");
        self.leaf_depth_count[d] = c as u32;
        while self.leaf_depth_count.len() > 1 && *self.leaf_depth_count.last().unwrap() == 0 {
            self.leaf_depth_count.pop();
        }
    }

    /// Propagates a leaf-count change from `id` up to the root.
    fn adjust_subtree_leaves(&mut self, id: usize, by: i32) {
        let mut cur = Some(id);
        while let Some(i) = cur {
            let c = self.nodes[i].subtree_leaves as i64 + by as i64;
            debug_assert!(c >= 1);
            self.nodes[i].subtree_leaves = c as u32;
            cur = self.nodes[i].parent;
        }
    }

    fn refresh_stats(&mut self) {
        let n_leaves = self.nodes[self.root].subtree_leaves;
        let delta = match self.nodes[self.root].body {
            NodeBody::Leaf { .. } => 0,
            NodeBody::Internal { left, right, .. } => {
                self.nodes[left].subtree_leaves.abs_diff(self.nodes[right].subtree_leaves)
            }
        };
        let depth = (self.leaf_depth_count.len() - 1) as u32;
        self.stats = TreeStats::new(n_leaves, delta, depth);
    }

    /// Axis-aligned cell of each leaf plus the observation-to-leaf map.
    pub fn partition(&self, x: &Matrix) -> CellPartition {
        let p = x.n_cols();
        let mut regions = Vec::new();
        // Depth-first with explicit bounds so regions come out in leaf order.
        let mut stack = vec![(self.root, vec![0.0; p], vec![1.0; p])];
        while let Some((id, lower, upper)) = stack.pop() {
            match &self.nodes[id].body {
                NodeBody::Leaf { .. } => regions.push(CellRegion { lower, upper }),
                NodeBody::Internal { rule, left, right } => {
                    let mut l_upper = upper.clone();
                    l_upper[rule.predictor] = l_upper[rule.predictor].min(rule.threshold);
                    let mut r_lower = lower.clone();
                    r_lower[rule.predictor] = r_lower[rule.predictor].max(rule.threshold);
                    // Push right first so the left leaf pops first.
                    stack.push((*right, r_lower, upper));
                    stack.push((*left, lower, l_upper));
                }
            }
        }
        CellPartition { regions, assignment: self.leaf_memberships(x) }
    }
}

impl PartialEq for Tree {
    /// Structural equality from the root; slot layout is ignored.
    fn eq(&self, other: &Self) -> bool {
        fn eq_at(a: &Tree, ai: usize, b: &Tree, bi: usize) -> bool {
            match (&a.nodes[ai].body, &b.nodes[bi].body) {
                (NodeBody::Leaf { value: va }, NodeBody::Leaf { value: vb }) => va == vb,
                (
                    NodeBody::Internal { rule: ra, left: la, right: rra },
                    NodeBody::Internal { rule: rb, left: lb, right: rrb },
                ) => ra == rb && eq_at(a, *la, b, *lb) && eq_at(a, *rra, b, *rrb),
                _ => false,
            }
        }
        eq_at(self, self.root, other, other.root)
    }
}

/// Hyper-rectangle of one leaf. The left child of a split owns the boundary
/// face (routing uses `<=`), so shared faces resolve leftward.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CellRegion {
    /// True when `x` lies in this cell under (lo, hi] semantics, with the
    /// global lower boundary 0 treated as closed. A split placed exactly at
    /// 0.0 is not distinguishable from the global boundary here; the
    /// `assignment` map is the authoritative membership in that edge case.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(x)
            .all(|((lo, hi), v)| (v > lo || (*lo == 0.0 && *v == 0.0)) && v <= hi)
    }
}

/// Leaf cells plus the observation-to-leaf assignment for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    pub regions: Vec<CellRegion>,
    pub assignment: Vec<usize>,
}
