//! Binary space partitioning by axis-aligned cuts.
//!
//! A cut at position `a` along one axis splits a set of points into the
//! points with coordinate `< a` and those with coordinate `>= a`. Its cost is
//! the within-cluster sum of squared distances of the two halves,
//!
//! ```text
//! W(a) = Σ_{left} |x - <x>_left|² + Σ_{right} |x - <x>_right|²
//! ```
//!
//! with `|·|` the Euclidean norm over all coordinates. `W` only changes when
//! `a` crosses a data value, so candidate positions are the midpoints between
//! consecutive distinct values. In one dimension this is exactly the 1-D
//! clustering cost; in several dimensions it keeps costs comparable across
//! axes with different spreads.
//!
//! The tree is grown greedily: at every step the leaf whose best cut removes
//! the most cost is split, until the leaf budget is used or the best relative
//! gain drops below a threshold. The leaf selection rule and the half-open
//! boundary convention (points on a cut belong to the upper side) are
//! documented choices; nothing in the cost function fixes them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;
use crate::target::ParameterBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub axis: usize,
    pub position: f64,
    /// Cost `W` of the two halves after the cut.
    pub cost_after: f64,
}

/// Leaf of the partition tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    pub index: usize,
    #[serde(rename = "box")]
    pub bx: ParameterBox,
    /// Exploration points that fell inside this leaf.
    pub exploration_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        axis: usize,
        position: f64,
        left: usize,
        right: usize,
    },
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub max_subspaces: usize,
    /// Stop once the best cut removes less than this fraction of the cost
    /// of the unpartitioned set.
    pub min_rel_gain: f64,
    /// Restrict cuts to these axes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allowed_axes: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            max_subspaces: 8,
            min_rel_gain: 0.01,
            allowed_axes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    root: ParameterBox,
    nodes: Vec<Node>,
    leaves: Vec<Subspace>,
    cuts: Vec<Cut>,
    cost_history: Vec<f64>,
}

/// Sum of squares about the mean, summed over dimensions. Rows are taken in
/// the given order so the result is reproducible.
fn sum_of_squares(points: &SampleMatrix, idx: &[usize]) -> f64 {
    if idx.len() < 2 {
        return 0.0;
    }
    let m = points.dim();
    let n = idx.len() as f64;
    let mut mean = vec![0.0; m];
    for &i in idx {
        for (acc, v) in mean.iter_mut().zip(points.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    idx.iter()
        .map(|&i| {
            points
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(v, mu)| (v - mu).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Best cut along `axis` of the points `idx`, scanning every midpoint with
/// running sums. Returns `(position, cost)`.
fn sweep_axis(points: &SampleMatrix, idx: &[usize], axis: usize) -> Option<(f64, f64)> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let m = points.dim();
    let mut order: Vec<usize> = idx.to_vec();
    // ties broken by the caller's order, which is canonical
    order.sort_by(|&a, &b| points.row(a)[axis].total_cmp(&points.row(b)[axis]));
    if points.row(order[0])[axis] == points.row(order[n - 1])[axis] {
        return None;
    }
    // centring keeps the running sums well conditioned
    let mut centre = vec![0.0; m];
    for &i in &order {
        for (c, v) in centre.iter_mut().zip(points.row(i)) {
            *c += v;
        }
    }
    centre.iter_mut().for_each(|c| *c /= n as f64);
    let mut tot1 = vec![0.0; m];
    let mut tot2 = vec![0.0; m];
    for &i in &order {
        for d in 0..m {
            let v = points.row(i)[d] - centre[d];
            tot1[d] += v;
            tot2[d] += v * v;
        }
    }
    let mut s1 = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    let mut best: Option<(usize, f64, f64)> = None;
    for k in 1..n {
        let row = points.row(order[k - 1]);
        for d in 0..m {
            let v = row[d] - centre[d];
            s1[d] += v;
            s2[d] += v * v;
        }
        let lo = row[axis];
        let hi = points.row(order[k])[axis];
        if lo == hi {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let mut cost = 0.0;
        for d in 0..m {
            let left = s2[d] - s1[d] * s1[d] / nl;
            let r1 = tot1[d] - s1[d];
            let right = (tot2[d] - s2[d]) - r1 * r1 / nr;
            cost += left.max(0.0) + right.max(0.0);
        }
        if best.is_none_or(|(_, _, c)| cost < c) {
            let mut pos = 0.5 * (lo + hi);
            if pos <= lo {
                pos = hi;
            }
            best = Some((k, pos, cost));
        }
    }
    // the running sums lose digits to cancellation; the winner's cost is
    // recomputed directly
    best.map(|(k, pos, _)| {
        (
            pos,
            sum_of_squares(points, &order[..k]) + sum_of_squares(points, &order[k..]),
        )
    })
}

/// Minimizer of `W(a)` over midpoints of a sorted list of values.
/// `None` when fewer than two distinct values are present.
pub fn best_cut_1d(sorted: &[f64]) -> Option<(f64, f64)> {
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "input must be sorted");
    let pts = SampleMatrix::from_flat(1, sorted.to_vec());
    let idx: Vec<usize> = (0..sorted.len()).collect();
    sweep_axis(&pts, &idx, 0)
}

/// Best cut over all axes: the one with the lowest `W`, ties going to the
/// lowest axis index. `None` when every axis is degenerate.
pub fn best_cut_nd(points: &SampleMatrix) -> Option<Cut> {
    let idx: Vec<usize> = (0..points.len()).collect();
    best_cut_among(points, &idx, None)
}

fn best_cut_among(points: &SampleMatrix, idx: &[usize], axes: Option<&[usize]>) -> Option<Cut> {
    let all: Vec<usize>;
    let axes = match axes {
        Some(a) => a,
        None => {
            all = (0..points.dim()).collect();
            &all
        }
    };
    let mut best: Option<Cut> = None;
    for &axis in axes {
        if let Some((position, cost)) = sweep_axis(points, idx, axis) {
            let better = match &best {
                None => true,
                Some(b) => cost < b.cost_after || (cost == b.cost_after && axis < b.axis),
            };
            if better {
                best = Some(Cut {
                    axis,
                    position,
                    cost_after: cost,
                });
            }
        }
    }
    best
}

struct WorkLeaf {
    node: usize,
    bx: ParameterBox,
    idx: Vec<usize>,
    cost: f64,
    best: Option<Cut>,
}

impl WorkLeaf {
    fn gain(&self) -> f64 {
        self.best.map_or(0.0, |c| (self.cost - c.cost_after).max(0.0))
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Grows the partition tree of `root` from exploration `points`.
///
/// Points are first put in lexicographic order, which makes the tree
/// independent of the input order. An empty point set yields a single leaf.
pub fn build_tree(points: &SampleMatrix, root: &ParameterBox, cfg: &PartitionConfig) -> Result<PartitionTree> {
    if cfg.max_subspaces == 0 {
        return Err(Error::invalid("max_subspaces must be at least 1"));
    }
    if points.dim() != root.dim() {
        return Err(Error::DimensionMismatch {
            expected: root.dim(),
            got: points.dim(),
        });
    }
    if let Some(axes) = &cfg.allowed_axes {
        if let Some(bad) = axes.iter().find(|a| **a >= root.dim()) {
            return Err(Error::invalid(format!("partition axis {bad} out of range")));
        }
    }
    if points.rows().any(|r| !root.contains(r)) {
        return Err(Error::OutOfDomain);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(points.row(a), points.row(b)));
    let points = points.select(&order);
    let axes = cfg.allowed_axes.as_deref();

    let all: Vec<usize> = (0..points.len()).collect();
    let root_cost = sum_of_squares(&points, &all);
    let mut nodes = vec![Node::Leaf(0)];
    let mut work = vec![WorkLeaf {
        node: 0,
        bx: root.clone(),
        best: best_cut_among(&points, &all, axes),
        idx: all,
        cost: root_cost,
    }];
    let mut total = root_cost;
    let mut cost_history = vec![total];
    let mut cuts = Vec::new();

    while work.len() < cfg.max_subspaces {
        let Some((pick, gain)) = work
            .iter()
            .enumerate()
            .filter(|(_, w)| w.best.is_some())
            .map(|(i, w)| (i, w.gain()))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            })
        else {
            break;
        };
        if !(root_cost > 0.0) || !(gain > 0.0) || gain / root_cost < cfg.min_rel_gain {
            break;
        }
        let leaf = work.swap_remove(pick);
        let cut = leaf.best.expect("picked leaf has a cut");
        let (lbox, rbox) = leaf.bx.split(cut.axis, cut.position);
        let (lidx, ridx): (Vec<usize>, Vec<usize>) =
            leaf.idx.iter().partition(|&&i| points.row(i)[cut.axis] < cut.position);
        let lnode = nodes.len();
        nodes.push(Node::Leaf(0));
        nodes.push(Node::Leaf(0));
        nodes[leaf.node] = Node::Split {
            axis: cut.axis,
            position: cut.position,
            left: lnode,
            right: lnode + 1,
        };
        for (node, bx, idx) in [(lnode, lbox, lidx), (lnode + 1, rbox, ridx)] {
            let cost = sum_of_squares(&points, &idx);
            let best = best_cut_among(&points, &idx, axes);
            work.push(WorkLeaf {
                node,
                bx,
                idx,
                cost,
                best,
            });
        }
        // keep the working list in node order so tie-breaking is stable
        work.sort_by_key(|w| w.node);
        total -= gain;
        cost_history.push(total);
        cuts.push(cut);
    }

    let mut tree = PartitionTree {
        root: root.clone(),
        nodes,
        leaves: Vec::new(),
        cuts,
        cost_history,
    };
    let counts: std::collections::HashMap<usize, usize> = work.iter().map(|w| (w.node, w.idx.len())).collect();
    tree.assign_leaves(&|node| counts.get(&node).copied().unwrap_or(0));
    Ok(tree)
}

impl PartitionTree {
    /// Tree with a single leaf covering `root`.
    pub fn single(root: &ParameterBox) -> Self {
        let mut t = PartitionTree {
            root: root.clone(),
            nodes: vec![Node::Leaf(0)],
            leaves: Vec::new(),
            cuts: Vec::new(),
            cost_history: vec![0.0],
        };
        t.assign_leaves(&|_| 0);
        t
    }

    /// Numbers leaves in preorder (lower side first) and computes their boxes.
    fn assign_leaves(&mut self, count: &dyn Fn(usize) -> usize) {
        let mut leaves = Vec::new();
        let mut stack = vec![(0usize, self.root.clone())];
        while let Some((node, bx)) = stack.pop() {
            match self.nodes[node] {
                Node::Split {
                    axis,
                    position,
                    left,
                    right,
                } => {
                    let (lb, rb) = bx.split(axis, position);
                    stack.push((right, rb));
                    stack.push((left, lb));
                }
                Node::Leaf(_) => {
                    let k = leaves.len();
                    self.nodes[node] = Node::Leaf(k);
                    leaves.push(Subspace {
                        index: k,
                        bx,
                        exploration_count: count(node),
                    });
                }
            }
        }
        self.leaves = leaves;
    }

    pub fn root(&self) -> &ParameterBox {
        &self.root
    }

    pub fn leaves(&self) -> &[Subspace] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Cuts in the order they were applied.
    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    /// Total cost before any cut, then after each cut.
    pub fn cost_history(&self) -> &[f64] {
        &self.cost_history
    }

    /// Index of the unique leaf containing `x`. A point exactly on a cut
    /// belongs to the upper side.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.root.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.root.dim(),
                got: x.len(),
            });
        }
        if !self.root.contains(x) {
            return Err(Error::OutOfDomain);
        }
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Split {
                    axis,
                    position,
                    left,
                    right,
                } => node = if x[axis] < position { left } else { right },
                Node::Leaf(k) => return Ok(k),
            }
        }
    }

    /// Number of points of `points` inside each leaf.
    pub fn leaf_counts(&self, points: &SampleMatrix) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.n_leaves()];
        for r in points.rows() {
            counts[self.locate(r)?] += 1;
        }
        Ok(counts)
    }

    pub fn to_json(&self) -> TreeJson {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match self.nodes[n] {
                Node::Split {
                    axis,
                    position,
                    left,
                    right,
                } => {
                    nodes.push(TreeNodeJson::Cut { axis, position });
                    stack.push(right);
                    stack.push(left);
                }
                Node::Leaf(k) => nodes.push(TreeNodeJson::Leaf {
                    leaf: k,
                    exploration_count: self.leaves[k].exploration_count,
                }),
            }
        }
        TreeJson {
            lower: self.root.lower().to_vec(),
            upper: self.root.upper().to_vec(),
            nodes,
            cost_history: self.cost_history.clone(),
        }
    }

    pub fn from_json(json: &TreeJson) -> Result<Self> {
        let root = ParameterBox::new(json.lower.clone(), json.upper.clone())?;
        let mut nodes = Vec::with_capacity(json.nodes.len());
        let mut counts = std::collections::HashMap::new();
        let mut iter = json.nodes.iter();
        fn build(
            iter: &mut std::slice::Iter<'_, TreeNodeJson>,
            nodes: &mut Vec<Node>,
            counts: &mut std::collections::HashMap<usize, usize>,
            dim: usize,
        ) -> Result<usize> {
            let id = nodes.len();
            nodes.push(Node::Leaf(0));
            match iter.next() {
                Some(TreeNodeJson::Cut { axis, position }) => {
                    if *axis >= dim {
                        return Err(Error::Schema(format!("tree cut axis {axis} out of range")));
                    }
                    let left = build(iter, nodes, counts, dim)?;
                    let right = build(iter, nodes, counts, dim)?;
                    nodes[id] = Node::Split {
                        axis: *axis,
                        position: *position,
                        left,
                        right,
                    };
                }
                Some(TreeNodeJson::Leaf { exploration_count, .. }) => {
                    counts.insert(id, *exploration_count);
                }
                None => return Err(Error::Schema("tree node list ended early".into())),
            }
            Ok(id)
        }
        build(&mut iter, &mut nodes, &mut counts, root.dim())?;
        if iter.next().is_some() {
            return Err(Error::Schema("tree node list has trailing entries".into()));
        }
        let cuts = json
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNodeJson::Cut { axis, position } => Some(Cut {
                    axis: *axis,
                    position: *position,
                    cost_after: f64::NAN,
                }),
                TreeNodeJson::Leaf { .. } => None,
            })
            .collect();
        let mut tree = PartitionTree {
            root,
            nodes,
            leaves: Vec::new(),
            cuts,
            cost_history: json.cost_history.clone(),
        };
        tree.assign_leaves(&|n| counts.get(&n).copied().unwrap_or(0));
        for leaf in &tree.leaves {
            let (l, u) = (leaf.bx.lower(), leaf.bx.upper());
            if l.iter().zip(u).any(|(a, b)| !(a < b)) {
                return Err(Error::Schema("tree cut lies outside its node box".into()));
            }
        }
        Ok(tree)
    }
}

/// Serialized tree: the root box plus nodes in preorder, lower side first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<TreeNodeJson>,
    #[serde(default)]
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNodeJson {
    Cut { axis: usize, position: f64 },
    Leaf { leaf: usize, exploration_count: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Direct evaluation of the cost at every midpoint, O(n²).
    fn brute_force_1d(sorted: &[f64]) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for k in 1..sorted.len() {
            if sorted[k - 1] == sorted[k] {
                continue;
            }
            let a = 0.5 * (sorted[k - 1] + sorted[k]);
            let left: Vec<f64> = sorted.iter().copied().filter(|v| *v < a).collect();
            let right: Vec<f64> = sorted.iter().copied().filter(|v| *v > a).collect();
            let ss = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            };
            let w = ss(&left) + ss(&right);
            if best.is_none_or(|(_, c)| w < c) {
                best = Some((a, w));
            }
        }
        best
    }

    #[test]
    fn two_pairs() {
        assert_eq!(best_cut_1d(&[0.0, 0.0, 1.0, 1.0]), Some((0.5, 0.0)));
        assert_eq!(brute_force_1d(&[0.0, 0.0, 1.0, 1.0]), Some((0.5, 0.0)));
        assert_eq!(best_cut_1d(&[0.0, 1.0]), Some((0.5, 0.0)));
    }

    #[test]
    fn degenerate_inputs_give_no_cut() {
        assert_eq!(best_cut_1d(&[]), None);
        assert_eq!(best_cut_1d(&[2.0]), None);
        assert_eq!(best_cut_1d(&[2.0, 2.0, 2.0]), None);
        let pts = SampleMatrix::from_rows(3, [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        assert_eq!(best_cut_nd(&pts), None);
    }

    #[test]
    fn separated_gaussians_cut_between_clusters() {
        let mut rng = chain_rng(4);
        let mut v: Vec<f64> = (0..5000)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                (if i % 2 == 0 { -3.0 } else { 3.0 }) + 0.1 * z
            })
            .collect();
        v.sort_by(f64::total_cmp);
        let (pos, cost) = best_cut_1d(&v).unwrap();
        let (bpos, bcost) = brute_force_1d(&v).unwrap();
        assert!(pos.abs() < 0.5);
        assert_eq!(pos, bpos);
        assert!((cost - bcost).abs() <= 1e-9 * bcost);
    }

    #[test]
    fn stretched_axis_with_gap_is_cut() {
        // 5x5 grid per cluster, axis 0 stretched by 10, clusters apart on axis 0
        let mut rows = Vec::new();
        for (offset, _) in [(0.0, 0), (200.0, 1)] {
            for i in 0..5 {
                for j in 0..5 {
                    rows.push([offset + 10.0 * i as f64, j as f64]);
                }
            }
        }
        let pts = SampleMatrix::from_rows(2, &rows);
        let cut = best_cut_nd(&pts).unwrap();
        assert_eq!(cut.axis, 0);
        assert!(cut.position > 40.0 && cut.position < 200.0);
        // per-axis exhaustive oracle
        let oracle = |axis: usize| {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[axis]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.windows(2)
                .map(|w| {
                    let a = 0.5 * (w[0] + w[1]);
                    let (l, r): (Vec<&[f64; 2]>, Vec<&[f64; 2]>) = rows.iter().partition(|p| p[axis] < a);
                    let ss = |s: &[&[f64; 2]]| {
                        let n = s.len() as f64;
                        (0..2)
                            .map(|d| {
                                let m = s.iter().map(|p| p[d]).sum::<f64>() / n;
                                s.iter().map(|p| (p[d] - m).powi(2)).sum::<f64>()
                            })
                            .sum::<f64>()
                    };
                    ss(&l) + ss(&r)
                })
                .fold(f64::INFINITY, f64::min)
        };
        assert!(oracle(0) < oracle(1));
        assert!((cut.cost_after - oracle(0)).abs() < 1e-9 * oracle(0));
    }

    #[test]
    fn max_one_subspace_is_the_root() {
        let root = ParameterBox::cube(2, -1.0, 1.0).unwrap();
        let pts = SampleMatrix::from_rows(2, [[0.1, 0.2], [-0.5, 0.3], [0.9, -0.9]]);
        let cfg = PartitionConfig {
            max_subspaces: 1,
            ..Default::default()
        };
        let tree = build_tree(&pts, &root, &cfg).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert_eq!(tree.leaves()[0].bx, root);
        assert_eq!(tree.leaves()[0].exploration_count, 3);
        assert_eq!(tree.locate(&[0.3, 0.3]).unwrap(), 0);
    }

    #[test]
    fn empty_sample_set_gives_single_leaf() {
        let root = ParameterBox::cube(3, 0.0, 1.0).unwrap();
        let tree = build_tree(&SampleMatrix::new(3), &root, &PartitionConfig::default()).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert!(build_tree(
            &SampleMatrix::new(3),
            &root,
            &PartitionConfig {
                max_subspaces: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn point_on_cut_goes_up() {
        let root = ParameterBox::cube(2, -1.0, 1.0).unwrap();
        let pts = SampleMatrix::from_rows(2, [[-0.5, 0.0], [0.5, 0.0]]);
        let cfg = PartitionConfig {
            max_subspaces: 2,
            min_rel_gain: 0.0,
            allowed_axes: Some(vec![0]),
        };
        let tree = build_tree(&pts, &root, &cfg).unwrap();
        assert_eq!(tree.cuts()[0].position, 0.0);
        assert_eq!(tree.locate(&[0.0, 0.3]).unwrap(), 1);
        assert_eq!(tree.locate(&[-1e-12, 0.3]).unwrap(), 0);
        assert!(matches!(tree.locate(&[1.5, 0.0]), Err(Error::OutOfDomain)));
    }

    #[test]
    fn one_dimensional_cost_curve_flattens() {
        let mut rng = chain_rng(21);
        let centres = [-6.0, 0.0, 5.0];
        let rows: Vec<[f64; 1]> = (0..5000)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                [centres[i % 3] + 0.7 * z]
            })
            .collect();
        let pts = SampleMatrix::from_rows(1, &rows);
        let root = ParameterBox::cube(1, -20.0, 20.0).unwrap();
        let cfg = PartitionConfig {
            max_subspaces: 4,
            min_rel_gain: 0.0,
            allowed_axes: None,
        };
        let tree = build_tree(&pts, &root, &cfg).unwrap();
        let h = tree.cost_history();
        assert_eq!(h.len(), 4);
        let drops: Vec<f64> = h.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(drops.iter().all(|d| *d >= 0.0));
        assert!(drops[0] > drops[1] && drops[1] > drops[2], "{drops:?}");
        assert!(drops[2] < 0.05 * drops[0]);
    }

    #[test]
    fn min_rel_gain_stops_early() {
        // two tight clusters: after one cut nothing worthwhile remains
        let rows: Vec<[f64; 1]> = (0..100)
            .map(|i| [if i < 50 { 0.0 } else { 10.0 } + 1e-3 * (i % 5) as f64])
            .collect();
        let pts = SampleMatrix::from_rows(1, &rows);
        let root = ParameterBox::cube(1, -1.0, 11.0).unwrap();
        let tree = build_tree(
            &pts,
            &root,
            &PartitionConfig {
                max_subspaces: 10,
                min_rel_gain: 0.01,
                allowed_axes: None,
            },
        )
        .unwrap();
        assert_eq!(tree.n_leaves(), 2);
    }

    #[test]
    fn allowed_axes_are_respected() {
        let mut rng = chain_rng(8);
        let pts = SampleMatrix::from_rows(
            3,
            (0..300).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>(), rng.random::<f64>()]),
        );
        let root = ParameterBox::cube(3, 0.0, 10.0).unwrap();
        let cfg = PartitionConfig {
            max_subspaces: 6,
            min_rel_gain: 0.0,
            allowed_axes: Some(vec![1, 2]),
        };
        let tree = build_tree(&pts, &root, &cfg).unwrap();
        assert!(tree.cuts().iter().all(|c| c.axis != 0));
        for leaf in tree.leaves() {
            assert_eq!(leaf.bx.lower()[0], 0.0);
            assert_eq!(leaf.bx.upper()[0], 10.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = chain_rng(5);
        let pts = SampleMatrix::from_rows(2, (0..200).map(|_| [rng.random::<f64>(), rng.random::<f64>()]));
        let root = ParameterBox::cube(2, 0.0, 1.0).unwrap();
        let tree = build_tree(
            &pts,
            &root,
            &PartitionConfig {
                max_subspaces: 7,
                min_rel_gain: 0.0,
                allowed_axes: None,
            },
        )
        .unwrap();
        let text = serde_json::to_string(&tree.to_json()).unwrap();
        let back = PartitionTree::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.leaves(), tree.leaves());
        for r in pts.rows() {
            assert_eq!(back.locate(r).unwrap(), tree.locate(r).unwrap());
        }
    }

    fn mix2d_tree(max_subspaces: usize, seed: u64) -> (SampleMatrix, PartitionTree) {
        let target = crate::target::benchmark_target(crate::target::MIX2D).unwrap();
        let ex = crate::exploration::explore(&target, &crate::exploration::ExplorationConfig::default(), seed).unwrap();
        let cfg = PartitionConfig {
            max_subspaces,
            min_rel_gain: 0.0,
            allowed_axes: None,
        };
        let tree = build_tree(&ex.points, &target.support, &cfg).unwrap();
        (ex.points, tree)
    }

    fn scan(tree: &PartitionTree, x: &[f64]) -> Vec<usize> {
        tree.leaves()
            .iter()
            .filter(|l| {
                (0..x.len()).all(|j| {
                    x[j] >= l.bx.lower()[j] && (x[j] < l.bx.upper()[j] || l.bx.upper()[j] == tree.root().upper()[j])
                })
            })
            .map(|l| l.index)
            .collect()
    }

    #[test]
    fn mix2d_thirty_leaves_assign_every_point_once() {
        let (pts, tree) = mix2d_tree(30, 3);
        assert_eq!(pts.len(), 500);
        assert_eq!(tree.n_leaves(), 30);
        assert_eq!(tree.cuts().len(), 29);
        for r in pts.rows() {
            assert_eq!(scan(&tree, r), vec![tree.locate(r).unwrap()]);
        }
        let counts = tree.leaf_counts(&pts).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 500);
        for (leaf, c) in tree.leaves().iter().zip(&counts) {
            assert_eq!(leaf.exploration_count, *c);
        }
        // the first cut runs between the two heavy modes
        let first = &tree.cuts()[0];
        assert!(first.position.abs() < 2.0, "{first:?}");
        let side = |x: &[f64]| x[first.axis] < first.position;
        assert_ne!(side(&[3.5, 3.5]), side(&[-3.5, -3.5]));
    }

    #[test]
    fn random_points_tile_the_root() {
        let (_, tree) = mix2d_tree(30, 4);
        let vol: f64 = tree.leaves().iter().map(|l| l.bx.volume()).sum();
        assert!((vol / tree.root().volume() - 1.0).abs() < 1e-9);
        let mut rng = chain_rng(40);
        for _ in 0..100_000 {
            let x = tree.root().sample_uniform(&mut rng);
            let hits = scan(&tree, &x);
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0], tree.locate(&x).unwrap());
        }
    }

    #[test]
    fn leaves_are_sub_boxes_in_preorder() {
        let (_, tree) = mix2d_tree(12, 5);
        for (k, leaf) in tree.leaves().iter().enumerate() {
            assert_eq!(leaf.index, k);
            assert!(tree.root().contains_box(&leaf.bx));
        }
        let h = tree.cost_history();
        assert_eq!(h.len(), tree.n_leaves());
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        for c in tree.cuts() {
            assert!(c.cost_after >= 0.0);
        }
    }

    fn cost_at(sorted: &[f64], a: f64) -> f64 {
        let ss = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        ss(sorted.iter().copied().filter(|v| *v < a).collect())
            + ss(sorted.iter().copied().filter(|v| *v > a).collect())
    }

    proptest::proptest! {
        #[test]
        fn prefix_sums_match_direct_evaluation(
            raw in proptest::collection::vec(-100i32..100, 2..200),
            scale in 0.01f64..10.0,
        ) {
            let mut v: Vec<f64> = raw.iter().map(|x| *x as f64 * scale).collect();
            v.sort_by(f64::total_cmp);
            let fast = best_cut_1d(&v);
            let slow = brute_force_1d(&v);
            proptest::prop_assert_eq!(fast.is_some(), slow.is_some());
            if let (Some((a, w)), Some((_, w_min))) = (fast, slow) {
                let tol = 1e-9 * cost_at(&v, f64::INFINITY).max(1e-300);
                proptest::prop_assert!((w - w_min).abs() <= tol, "{} vs {}", w, w_min);
                proptest::prop_assert!((cost_at(&v, a) - w_min).abs() <= tol);
            }
        }

        #[test]
        fn shuffling_points_keeps_the_tree(seed in 0u64..1000, n in 2usize..150) {
            let mut rng = chain_rng(seed);
            let rows: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() * 4.0, (rng.random::<f64>() * 8.0).floor()]).collect();
            let mut shuffled = rows.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let root = ParameterBox::cube(2, 0.0, 8.0).unwrap();
            let cfg = PartitionConfig { max_subspaces: 6, min_rel_gain: 0.0, allowed_axes: None };
            let a = build_tree(&SampleMatrix::from_rows(2, &rows), &root, &cfg).unwrap();
            let b = build_tree(&SampleMatrix::from_rows(2, &shuffled), &root, &cfg).unwrap();
            proptest::prop_assert_eq!(a.to_json(), b.to_json());
        }

        #[test]
        fn greedy_cost_never_rises(seed in 0u64..1000, n in 0usize..200, k in 1usize..12) {
            let mut rng = chain_rng(seed);
            let rows: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random::<f64>().powi(3), rng.random_range(0..3) as f64]).collect();
            let root = ParameterBox::cube(3, 0.0, 3.0).unwrap();
            let cfg = PartitionConfig { max_subspaces: k, min_rel_gain: 0.0, allowed_axes: None };
            let tree = build_tree(&SampleMatrix::from_rows(3, &rows), &root, &cfg).unwrap();
            proptest::prop_assert_eq!(tree.n_leaves(), tree.cuts().len() + 1);
            proptest::prop_assert!(tree.n_leaves() <= k);
            let h = tree.cost_history();
            proptest::prop_assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }
}
