//! Single CART regression tree: greedy best-split search with an exhaustive
//! threshold scan over midpoints of sorted unique feature values.

use super::{ForestParams, Impurity};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Sorted training targets of the node.
        targets: Vec<f64>,
    },
}

impl TreeNode {
    pub fn leaf_for<'a>(&'a self, x: &[f64]) -> &'a [f64] {
        match self {
            TreeNode::Leaf { targets } => targets,
            TreeNode::Internal { feature, threshold, left, right } => {
                if x[*feature] < *threshold {
                    left.leaf_for(x)
                } else {
                    right.leaf_for(x)
                }
            }
        }
    }

    pub fn count_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.count_leaves() + right.count_leaves(),
        }
    }
}

/// Candidate split produced by the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub cost: f64,
}

/// Grow one tree on the given sample indices. Feature subsets are drawn per
/// split from `rng`; recursion order is fixed, so the tree is deterministic
/// given the generator state.
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[f64],
    indices: &[usize],
    params: &ForestParams,
    rng: &mut impl Rng,
) -> TreeNode {
    let n = indices.len();
    if n < 2 * params.min_leaf || is_constant(y, indices) {
        return make_leaf(y, indices);
    }
    let p = x[0].len();
    let mut features: Vec<usize> = (0..p).collect();
    if params.max_features < p {
        features.shuffle(rng);
        features.truncate(params.max_features);
        features.sort_unstable();
    }
    let Some(split) = best_split(x, y, indices, &features, params) else {
        return make_leaf(y, indices);
    };
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for &i in indices {
        if x[i][split.feature] < split.threshold {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    TreeNode::Internal {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(fit_tree(x, y, &left, params, rng)),
        right: Box::new(fit_tree(x, y, &right, params, rng)),
    }
}

fn is_constant(y: &[f64], indices: &[usize]) -> bool {
    indices.windows(2).all(|w| y[w[0]] == y[w[1]])
}

fn make_leaf(y: &[f64], indices: &[usize]) -> TreeNode {
    let mut targets: Vec<f64> = indices.iter().map(|&i| y[i]).collect();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    TreeNode::Leaf { targets }
}

/// Best split over the candidate features; ties break toward the lowest
/// feature index, then the lowest threshold (both by scan order).
pub fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    indices: &[usize],
    features: &[usize],
    params: &ForestParams,
) -> Option<Split> {
    let mut best: Option<Split> = None;
    for &f in features {
        let candidate = match params.impurity {
            Impurity::Mse => scan_feature_mse(x, y, indices, f, params.min_leaf),
            Impurity::Mae => scan_feature_mae(x, y, indices, f, params.min_leaf),
        };
        if let Some(c) = candidate {
            if best.is_none() || c.cost < best.unwrap().cost {
                best = Some(c);
            }
        }
    }
    best
}

fn sorted_by_feature(x: &[Vec<f64>], indices: &[usize], f: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap());
    order
}

fn midpoint(a: f64, b: f64) -> Option<f64> {
    let thr = a + 0.5 * (b - a);
    // Adjacent floats can collapse the midpoint onto an endpoint.
    (thr > a && thr <= b).then_some(thr)
}

fn scan_feature_mse(
    x: &[Vec<f64>],
    y: &[f64],
    indices: &[usize],
    f: usize,
    min_leaf: usize,
) -> Option<Split> {
    let order = sorted_by_feature(x, indices, f);
    let n = order.len();
    let total_s1: f64 = order.iter().map(|&i| y[i]).sum();
    let total_s2: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut best: Option<Split> = None;
    for k in 0..n - 1 {
        let yi = y[order[k]];
        s1 += yi;
        s2 += yi * yi;
        let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
        if a == b {
            continue;
        }
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let Some(thr) = midpoint(a, b) else { continue };
        let cost_l = s2 - s1 * s1 / nl as f64;
        let r1 = total_s1 - s1;
        let r2 = total_s2 - s2;
        let cost_r = r2 - r1 * r1 / nr as f64;
        let cost = cost_l + cost_r;
        if best.is_none() || cost < best.unwrap().cost {
            best = Some(Split { feature: f, threshold: thr, cost });
        }
    }
    best
}

/// Fenwick tree over value ranks holding counts and sums, supporting the
/// incremental median-absolute-deviation scan.
struct RankedSums {
    count: Vec<i64>,
    sum: Vec<f64>,
    total_count: i64,
    total_sum: f64,
}

impl RankedSums {
    fn new(n_ranks: usize) -> Self {
        Self {
            count: vec![0; n_ranks + 1],
            sum: vec![0.0; n_ranks + 1],
            total_count: 0,
            total_sum: 0.0,
        }
    }

    fn add(&mut self, rank: usize, value: f64, sign: i64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            self.count[i] += sign;
            self.sum[i] += sign as f64 * value;
            i += i & i.wrapping_neg();
        }
        self.total_count += sign;
        self.total_sum += sign as f64 * value;
    }

    /// (count, sum) over ranks 0..=rank.
    fn prefix(&self, rank: usize) -> (i64, f64) {
        let mut i = rank + 1;
        let (mut c, mut s) = (0i64, 0.0);
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }

    /// Rank of the k-th smallest element (1-based k).
    fn select(&self, k: i64) -> usize {
        let mut pos = 0usize;
        let mut remaining = k;
        let mut step = (self.count.len() - 1).next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.count.len() && self.count[next] < remaining {
                remaining -= self.count[next];
                pos = next;
            }
            step >>= 1;
        }
        pos // 0-based rank
    }

    /// Sum of |y - median| over the held multiset.
    fn mad_cost(&self, rank_values: &[f64]) -> f64 {
        if self.total_count == 0 {
            return 0.0;
        }
        let k = (self.total_count + 1) / 2;
        let rank = self.select(k);
        let m = rank_values[rank];
        let (c_le, s_le) = self.prefix(rank);
        let c_gt = self.total_count - c_le;
        let s_gt = self.total_sum - s_le;
        (m * c_le as f64 - s_le) + (s_gt - m * c_gt as f64)
    }
}

fn scan_feature_mae(
    x: &[Vec<f64>],
    y: &[f64],
    indices: &[usize],
    f: usize,
    min_leaf: usize,
) -> Option<Split> {
    let order = sorted_by_feature(x, indices, f);
    let n = order.len();
    // Rank-compress the node's targets.
    let mut rank_values: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    rank_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rank_values.dedup();
    let rank_of = |v: f64| rank_values.partition_point(|&r| r < v);

    let mut left = RankedSums::new(rank_values.len());
    let mut right = RankedSums::new(rank_values.len());
    for &i in &order {
        right.add(rank_of(y[i]), y[i], 1);
    }
    let mut best: Option<Split> = None;
    for k in 0..n - 1 {
        let yi = y[order[k]];
        left.add(rank_of(yi), yi, 1);
        right.add(rank_of(yi), yi, -1);
        let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
        if a == b {
            continue;
        }
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let Some(thr) = midpoint(a, b) else { continue };
        let cost = left.mad_cost(&rank_values) + right.mad_cost(&rank_values);
        if best.is_none() || cost < best.unwrap().cost {
            best = Some(Split { feature: f, threshold: thr, cost });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::math::seed_stream;
    use rand::Rng;

    fn params(min_leaf: usize, impurity: Impurity) -> ForestParams {
        ForestParams {
            n_trees: 1,
            min_leaf,
            max_features: usize::MAX,
            impurity,
            bootstrap: false,
            seed: 0,
        }
    }

    #[test]
    fn constant_targets_become_a_single_leaf() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y = vec![2.5; 40];
        let idx: Vec<usize> = (0..40).collect();
        let mut rng = seed_stream(1, "tree", 0);
        let p = params(1, Impurity::Mse);
        let tree = fit_tree(&x, &y, &idx, &p, &mut rng);
        assert!(matches!(tree, TreeNode::Leaf { .. }));
    }

    #[test]
    fn step_function_splits_inside_the_gap() {
        let mut rng = seed_stream(2, "tree", 0);
        let x: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.random::<f64>() * 4.0 - 2.0])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let idx: Vec<usize> = (0..100).collect();
        let p = params(1, Impurity::Mse);
        let tree = fit_tree(&x, &y, &idx, &p, &mut rng);
        let TreeNode::Internal { threshold, .. } = tree else {
            panic!("expected a split");
        };
        let max_neg = x.iter().map(|r| r[0]).filter(|&v| v <= 0.0).fold(f64::NEG_INFINITY, f64::max);
        let min_pos = x.iter().map(|r| r[0]).filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        assert!(threshold > max_neg && threshold <= min_pos, "threshold {threshold} not in ({max_neg}, {min_pos}]");
    }

    /// Exhaustive brute-force split scan used as the oracle.
    fn brute_force_split(
        x: &[Vec<f64>],
        y: &[f64],
        indices: &[usize],
        impurity: Impurity,
        min_leaf: usize,
    ) -> Option<Split> {
        let p = x[0].len();
        let mut best: Option<Split> = None;
        for f in 0..p {
            let mut vals: Vec<f64> = indices.iter().map(|&i| x[i][f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let Some(thr) = midpoint(w[0], w[1]) else { continue };
                let (mut yl, mut yr) = (Vec::new(), Vec::new());
                for &i in indices {
                    if x[i][f] < thr {
                        yl.push(y[i]);
                    } else {
                        yr.push(y[i]);
                    }
                }
                if yl.len() < min_leaf || yr.len() < min_leaf {
                    continue;
                }
                let cost = node_cost(&yl, impurity) + node_cost(&yr, impurity);
                if best.is_none() || cost < best.unwrap().cost - 1e-12 {
                    best = Some(Split { feature: f, threshold: thr, cost });
                }
            }
        }
        best
    }

    fn node_cost(vals: &[f64], impurity: Impurity) -> f64 {
        match impurity {
            Impurity::Mse => {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - m) * (v - m)).sum()
            }
            Impurity::Mae => {
                let mut s = vals.to_vec();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = s[(s.len() - 1) / 2];
                s.iter().map(|v| (v - m).abs()).sum()
            }
        }
    }

    #[test]
    fn chosen_split_matches_brute_force_scan() {
        for seed in 0..10 {
            let mut rng = seed_stream(seed, "split-oracle", 0);
            let n = 200;
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.random::<f64>() * 6.0).collect())
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|r| r[0] * 1.5 - r[2] + 2.0 * rng.random::<f64>())
                .collect();
            let idx: Vec<usize> = (0..n).collect();
            for impurity in [Impurity::Mse, Impurity::Mae] {
                let p = params(5, impurity);
                let got = best_split(&x, &y, &idx, &[0, 1, 2, 3], &p).unwrap();
                let want = brute_force_split(&x, &y, &idx, impurity, 5).unwrap();
                assert_eq!(got.feature, want.feature, "seed {seed} {impurity:?}");
                assert!(
                    (got.threshold - want.threshold).abs() < 1e-12,
                    "seed {seed} {impurity:?}: {got:?} vs {want:?}"
                );
                assert!((got.cost - want.cost).abs() < 1e-8 * (1.0 + want.cost));
            }
        }
    }

    #[test]
    fn min_leaf_is_respected_everywhere() {
        let mut rng = seed_stream(6, "minleaf", 0);
        let n = 150;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + rng.random::<f64>()).collect();
        let idx: Vec<usize> = (0..n).collect();
        let p = params(20, Impurity::Mse);
        let tree = fit_tree(&x, &y, &idx, &p, &mut rng);
        fn check(node: &TreeNode, min_leaf: usize) {
            match node {
                TreeNode::Leaf { targets } => assert!(targets.len() >= min_leaf),
                TreeNode::Internal { left, right, .. } => {
                    check(left, min_leaf);
                    check(right, min_leaf);
                }
            }
        }
        check(&tree, 20);
    }
}
