//! CART classification trees grown with sampled candidate features.

use rand::seq::index::sample;
use rand::Rng;

use super::dataset::{Dataset, FeatureKind};
use super::Criterion;

#[derive(Clone, Debug, PartialEq)]
pub enum Split {
    Numeric { threshold: f64 },
    /// Bit `k` set sends level `k` left.
    Categorical { left_mask: u32 },
}

impl Split {
    #[inline]
    fn goes_left(&self, v: f64) -> bool {
        match *self {
            Split::Numeric { threshold } => v <= threshold,
            Split::Categorical { left_mask } => left_mask >> (v as u32) & 1 == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Fraction of positive training rows reaching the leaf.
        fraction: f64,
        count: usize,
    },
    Internal {
        feature: usize,
        split: Split,
        left: usize,
        right: usize,
        count: usize,
        /// `count` times the impurity decrease of the split.
        weighted_gain: f64,
    },
}

impl TreeNode {
    pub fn count(&self) -> usize {
        match *self {
            TreeNode::Leaf { count, .. } | TreeNode::Internal { count, .. } => count,
        }
    }
}

/// Nodes in preorder; index 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<TreeNode>,
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub mtry: usize,
    pub criterion: Criterion,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn from_nodes(nodes: Vec<TreeNode>) -> Self {
        Self { nodes }
    }

    /// Positive-class fraction of the leaf `row` lands in.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { fraction, .. } => return *fraction,
                TreeNode::Internal { feature, split, left, right, .. } => {
                    i = if split.goes_left(row[*feature]) { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Impurity decrease per feature, weighted by the share of root samples
    /// reaching each split.
    pub fn importances(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        let root = self.nodes[0].count().max(1) as f64;
        for n in &self.nodes {
            if let TreeNode::Internal { feature, weighted_gain, .. } = n {
                imp[*feature] += weighted_gain / root;
            }
        }
        imp
    }

    pub(crate) fn grow<R: Rng>(data: &Dataset, rows: Vec<usize>, params: &GrowParams, rng: &mut R) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        let mut scratch = Vec::with_capacity(rows.len());
        tree.grow_node(data, rows, 0, params, rng, &mut scratch);
        tree
    }

    fn grow_node<R: Rng>(
        &mut self,
        data: &Dataset,
        rows: Vec<usize>,
        depth: usize,
        params: &GrowParams,
        rng: &mut R,
        scratch: &mut Vec<(f64, bool)>,
    ) -> usize {
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| data.labels()[i]).count();
        let id = self.nodes.len();
        let leaf = TreeNode::Leaf {
            fraction: if n == 0 { 0.0 } else { pos as f64 / n as f64 },
            count: n,
        };
        self.nodes.push(leaf);

        if depth >= params.max_depth
            || n < params.min_samples_split
            || n < 2 * params.min_samples_leaf
            || pos == 0
            || pos == n
        {
            return id;
        }
        let Some(best) = best_split(data, &rows, pos, params, rng, scratch) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| best.split.goes_left(data.value(i, best.feature)));
        drop(rows);
        let left = self.grow_node(data, left_rows, depth + 1, params, rng, scratch);
        let right = self.grow_node(data, right_rows, depth + 1, params, rng, scratch);
        self.nodes[id] = TreeNode::Internal {
            feature: best.feature,
            split: best.split,
            left,
            right,
            count: n,
            weighted_gain: best.gain * n as f64,
        };
        id
    }
}

pub(crate) fn impurity(criterion: Criterion, n: usize, pos: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let q = pos as f64 / n as f64;
    match criterion {
        Criterion::Gini => 2.0 * q * (1.0 - q),
        Criterion::Entropy => {
            let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
            h(q) + h(1.0 - q)
        }
    }
}

struct Candidate {
    feature: usize,
    split: Split,
    gain: f64,
}

/// Best split over `mtry` features sampled without replacement. Features
/// are scanned in ascending index and thresholds in ascending order, and
/// only a strictly larger gain replaces the incumbent.
fn best_split<R: Rng>(
    data: &Dataset,
    rows: &[usize],
    pos: usize,
    params: &GrowParams,
    rng: &mut R,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Candidate> {
    let n = rows.len();
    let parent = impurity(params.criterion, n, pos);
    let min_leaf = params.min_samples_leaf.max(1);
    let gain_of = |nl: usize, pl: usize| {
        let nr = n - nl;
        let pr = pos - pl;
        parent
            - (nl as f64 / n as f64) * impurity(params.criterion, nl, pl)
            - (nr as f64 / n as f64) * impurity(params.criterion, nr, pr)
    };

    let mut features = sample(rng, data.n_features(), params.mtry).into_vec();
    features.sort_unstable();

    let mut best: Option<Candidate> = None;
    let offer = |c: Candidate, best: &mut Option<Candidate>| {
        if best.as_ref().is_none_or(|b| c.gain > b.gain) {
            *best = Some(c);
        }
    };
    for f in features {
        match data.kinds()[f] {
            FeatureKind::Numeric => {
                scratch.clear();
                scratch.extend(rows.iter().map(|&i| (data.value(i, f), data.labels()[i])));
                scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                let mut pl = 0;
                for k in 1..n {
                    pl += scratch[k - 1].1 as usize;
                    let (lo, hi) = (scratch[k - 1].0, scratch[k].0);
                    if lo == hi || k < min_leaf || n - k < min_leaf {
                        continue;
                    }
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    offer(
                        Candidate { feature: f, split: Split::Numeric { threshold }, gain: gain_of(k, pl) },
                        &mut best,
                    );
                }
            }
            FeatureKind::Categorical { levels } => {
                let levels = levels as usize;
                let mut count = vec![0usize; levels];
                let mut positive = vec![0usize; levels];
                for &i in rows {
                    let l = data.value(i, f) as usize;
                    count[l] += 1;
                    positive[l] += data.labels()[i] as usize;
                }
                // Level 0 always goes left, which enumerates each partition once.
                for mask in (1u32..(1 << levels) - 1).step_by(2) {
                    let (mut nl, mut pl) = (0, 0);
                    for l in 0..levels {
                        if mask >> l & 1 == 1 {
                            nl += count[l];
                            pl += positive[l];
                        }
                    }
                    if nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    offer(
                        Candidate { feature: f, split: Split::Categorical { left_mask: mask }, gain: gain_of(nl, pl) },
                        &mut best,
                    );
                }
            }
        }
    }
    best
}
