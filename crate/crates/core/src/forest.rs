//! Random forest of CART trees with Gini splits and bootstrap resampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rr::Label;

pub const DEFAULT_TREES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Node {
    /// Samples with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class probabilities `[normal, positive]`.
    Leaf { proba: [f64; 2] },
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(p_positive: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf {
                proba: [1.0 - p_positive, p_positive],
            }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { proba } => return proba[1],
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

/// `ceil(sqrt(d))`, computed exactly.
pub fn features_per_split(d: usize) -> usize {
    let mut k = 0;
    while k * k < d {
        k += 1;
    }
    k.max(1)
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a, X: AsRef<[f64]>> {
    x: &'a [X],
    y: &'a [Label],
    mtry: usize,
    nodes: Vec<Node>,
}

impl<X: AsRef<[f64]>> Builder<'_, X> {
    fn make_leaf(&self, idx: &[usize]) -> Node {
        let pos = idx.iter().filter(|&&i| self.y[i].is_positive()).count();
        let p = pos as f64 / idx.len() as f64;
        Node::Leaf { proba: [1.0 - p, p] }
    }

    /// Best midpoint split over the given features: `(impurity, feature, threshold)`.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i].is_positive()).count();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut col: Vec<(f64, bool)> = Vec::with_capacity(n);
        for &f in features {
            col.clear();
            col.extend(idx.iter().map(|&i| (self.x[i].as_ref()[f], self.y[i].is_positive())));
            col.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 0..n - 1 {
                if col[k].1 {
                    left_pos += 1;
                }
                if col[k].0 == col[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                let imp = (nl as f64 * gini(left_pos, nl)
                    + nr as f64 * gini(total_pos - left_pos, nr))
                    / n as f64;
                if best.is_none_or(|b| imp < b.0) {
                    best = Some((imp, f, 0.5 * (col[k].0 + col[k + 1].0)));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let pos = idx.iter().filter(|&&i| self.y[i].is_positive()).count();
        self.nodes.push(self.make_leaf(&idx));
        if idx.len() < 2 || pos == 0 || pos == idx.len() {
            return id;
        }
        let d = self.x[0].as_ref().len();
        let mut features: Vec<usize> = sample(rng, d, self.mtry.min(d)).into_vec();
        features.sort_unstable();
        let Some((_, feature, threshold)) = self.best_split(&idx, &features) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i].as_ref()[feature] < threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Trains `n_trees` trees, each on its own bootstrap resample of the rows.
/// Tree `t` draws from stream `t` of the seeded generator, so the forest
/// does not depend on the order in which trees are built.
pub fn rf_train<X: AsRef<[f64]>>(
    x: &[X],
    y: &[Label],
    n_trees: usize,
    seed: u64,
) -> Result<RandomForest> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: y.len(),
            got: x.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Argument("at least two samples are required".into()));
    }
    let pos = y.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Argument("both classes must be present".into()));
    }
    let d = x[0].as_ref().len();
    if d == 0 || x.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Argument("rows must share a non-zero width".into()));
    }
    if x.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::Argument("features must be finite".into()));
    }
    let mtry = features_per_split(d);
    let trees = (0..n_trees)
        .map(|t| train_tree(x, y, mtry, seed, t as u64))
        .collect();
    Ok(RandomForest {
        trees,
        n_features: d,
        features_per_split: mtry,
        seed,
    })
}

/// One tree of a forest; exposed so callers can build trees in parallel.
pub fn train_tree<X: AsRef<[f64]>>(x: &[X], y: &[Label], mtry: usize, seed: u64, index: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = x.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut b = Builder {
        x,
        y,
        mtry,
        nodes: Vec::new(),
    };
    b.grow(idx, &mut rng);
    Tree { nodes: b.nodes }
}

/// Mean over trees of the leaf positive-class probability. The per-tree
/// values are summed in sorted order, so tree order does not affect the
/// result.
pub fn rf_predict(rf: &RandomForest, x: &[f64]) -> f64 {
    let mut votes: Vec<f64> = rf.trees.iter().map(|t| t.predict(x)).collect();
    votes.sort_by(f64::total_cmp);
    votes.iter().sum::<f64>() / votes.len() as f64
}
