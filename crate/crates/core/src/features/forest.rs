//! Random-forest leaf groups.
//!
//! The forest is a bag of CART regression trees grown greedily by variance
//! reduction on absolute residuals `|y − ŷ|`. Its only job downstream is to
//! partition the input space: every leaf of every tree becomes one group, so
//! each input belongs to exactly `T` overlapping groups.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features tried at each split; `None` means 1.0 for a single
    /// feature and 1/3 otherwise.
    pub feature_fraction: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 4,
            min_samples_leaf: 50,
            feature_fraction: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfParams {
    fn features_per_split(&self, p: usize) -> usize {
        let fraction = self.feature_fraction.unwrap_or(if p == 1 { 1.0 } else { 1.0 / 3.0 });
        ((fraction * p as f64).ceil() as usize).clamp(1, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Inputs with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        leaf_id: usize,
        value: f64,
        samples: usize,
    },
}

impl Node {
    fn leaf_for(&self, x: &[f64]) -> (usize, f64) {
        let mut node = self;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                Node::Leaf { leaf_id, value, .. } => return (*leaf_id, *value),
            }
        }
    }

    fn count_leaves(&self) -> usize {
        match self {
            Node::Split { left, right, .. } => left.count_leaves() + right.count_leaves(),
            Node::Leaf { .. } => 1,
        }
    }

    fn offset_ids(&mut self, offset: usize) {
        match self {
            Node::Split { left, right, .. } => {
                left.offset_ids(offset);
                right.offset_ids(offset);
            }
            Node::Leaf { leaf_id, .. } => *leaf_id += offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

impl Tree {
    pub fn leaf_count(&self) -> usize {
        self.root.count_leaves()
    }

    pub fn depth(&self) -> usize {
        fn depth(node: &Node) -> usize {
            match node {
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
                Node::Leaf { .. } => 0,
            }
        }
        depth(&self.root)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_features: usize,
    params: RfParams,
    trees: Vec<Tree>,
    leaf_count: usize,
}

impl RandomForest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn params(&self) -> &RfParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Global leaf id reached in each tree.
    pub fn leaf_ids(&self, x: &[f64]) -> Vec<usize> {
        self.trees.iter().map(|t| t.root.leaf_for(x).0).collect()
    }

    /// Binary leaf-indicator vector: exactly one 1 per tree.
    pub fn leaf_embed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.leaf_count];
        for id in self.leaf_ids(x) {
            out[id] = 1.0;
        }
        out
    }

    /// Mean of the per-tree leaf means.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.root.leaf_for(x).1).sum();
        total / self.trees.len() as f64
    }

    /// Checks the structural invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.leaf_count];
        fn walk(node: &Node, seen: &mut [bool], p: usize) -> Result<()> {
            match node {
                Node::Split {
                    feature, left, right, ..
                } => {
                    if *feature >= p {
                        return Err(Error::InvalidConfig(format!("split on feature {feature} >= {p}")));
                    }
                    walk(left, seen, p)?;
                    walk(right, seen, p)
                }
                Node::Leaf { leaf_id, .. } => match seen.get_mut(*leaf_id) {
                    Some(slot) if !*slot => {
                        *slot = true;
                        Ok(())
                    }
                    _ => Err(Error::InvalidConfig(format!("bad or duplicate leaf id {leaf_id}"))),
                },
            }
        }
        for tree in &self.trees {
            walk(&tree.root, &mut seen, self.n_features)?;
        }
        if seen.iter().all(|&s| s) && !self.trees.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("leaf ids are not contiguous".into()))
        }
    }
}

/// Trains a forest on `(features, residual_targets)`.
///
/// Tree `t` uses the seed `derive_seed(params.seed, t)` for its bootstrap draw
/// and feature subsampling, so the result does not depend on thread count.
pub fn rf_fit(features: &Matrix, residual_targets: &[f64], params: &RfParams) -> Result<RandomForest> {
    let n = features.nrows();
    let p = features.ncols();
    if n == 0 || p == 0 {
        return Err(Error::EmptyData(
            "random forest needs at least one row and feature".into(),
        ));
    }
    if residual_targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: residual_targets.len(),
        });
    }
    if params.n_trees == 0 || params.min_samples_leaf == 0 {
        return Err(Error::InvalidConfig(
            "n_trees and min_samples_leaf must be positive".into(),
        ));
    }
    if n < 2 * params.min_samples_leaf && params.max_depth > 0 {
        return Err(Error::InvalidConfig(format!(
            "{n} rows cannot fill two leaves of {} samples",
            params.min_samples_leaf
        )));
    }
    if let Some(f) = params.feature_fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!("feature_fraction {f} outside (0, 1]")));
        }
    }

    let mtry = params.features_per_split(p);
    let mut trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(params.seed, t as u64));
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x: features,
                y: residual_targets,
                params,
                mtry,
                rng,
                next_leaf: 0,
            };
            Tree {
                root: builder.grow(&mut rows, 0),
            }
        })
        .collect();

    let mut offset = 0;
    for tree in &mut trees {
        let count = tree.leaf_count();
        tree.root.offset_ids(offset);
        offset += count;
    }
    Ok(RandomForest {
        n_features: p,
        params: params.clone(),
        trees,
        leaf_count: offset,
    })
}

struct TreeBuilder<'a, R> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a RfParams,
    mtry: usize,
    rng: R,
    next_leaf: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let min_leaf = self.params.min_samples_leaf;
        if depth < self.params.max_depth && rows.len() >= 2 * min_leaf {
            if let Some(best) = self.best_split(rows) {
                let mid = partition(rows, |&r| self.x.get(r, best.feature) <= best.threshold);
                let (left_rows, right_rows) = rows.split_at_mut(mid);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                return Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        let value = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        let leaf_id = self.next_leaf;
        self.next_leaf += 1;
        Node::Leaf {
            leaf_id,
            value,
            samples: rows.len(),
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let p = self.x.ncols();
        let mut candidates = sample(&mut self.rng, p, self.mtry).into_vec();
        candidates.sort_unstable();

        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let base = total * total / n as f64;
        let scale = rows.iter().map(|&r| self.y[r] * self.y[r]).sum::<f64>().max(1e-300);

        let mut best: Option<BestSplit> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in candidates {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.x.get(r, feature), self.y[r])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for s in 1..n {
                left_sum += order[s - 1].1;
                if s < min_leaf || n - s < min_leaf || order[s - 1].0 >= order[s].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / s as f64 + right_sum * right_sum / (n - s) as f64 - base;
                if gain > 1e-12 * scale && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (lo, hi) = (order[s - 1].0, order[s].0);
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// In-place partition; returns the number of elements satisfying `pred`,
/// which end up first. Relative order is not preserved.
fn partition<T, F: Fn(&T) -> bool>(items: &mut [T], pred: F) -> usize {
    let mut mid = 0;
    for i in 0..items.len() {
        if pred(&items[i]) {
            items.swap(mid, i);
            mid += 1;
        }
    }
    mid
}
