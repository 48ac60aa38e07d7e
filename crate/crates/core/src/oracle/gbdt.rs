//! Second-order gradient boosting of depth-limited regression trees on
//! logistic loss.
//!
//! Per round every training row gets gradient `g = p - y` and hessian
//! `h = p (1 - p)`. A node with sums `G`, `H` takes leaf value
//! `-G / (H + lambda)`; a split is kept when
//! `0.5 * (G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ))` exceeds `min_gain`
//! and both children hold at least `min_leaf` rows.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub subsample: f64,
    pub lambda: f64,
    pub min_gain: f64,
    pub min_leaf: usize,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub early_stopping_rounds: usize,
    /// Share of the labeled rows held out for early stopping.
    pub validation_fraction: f64,
    pub threshold: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            learning_rate: 0.1,
            n_trees: 200,
            max_depth: 4,
            subsample: 0.8,
            lambda: 1.0,
            min_gain: 1e-6,
            min_leaf: 2,
            early_stopping_rounds: 20,
            validation_fraction: 0.2,
            threshold: 0.5,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.learning_rate > 0.0
            && self.n_trees > 0
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.lambda >= 0.0
            && self.min_leaf >= 1
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.threshold > 0.0
            && self.threshold < 1.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!(
                "invalid oracle hyperparameters: {self:?}"
            )))
        }
    }
}

/// Node arrays of one tree. `feature[i] < 0` marks a leaf; internal nodes
/// send `x[feature] < threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn new() -> Self {
        Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
        }
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf_only(&self) -> bool {
        self.feature.len() == 1
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while self.feature[i] >= 0 {
            i = if x[self.feature[i] as usize] < self.threshold[i] {
                self.left[i] as usize
            } else {
                self.right[i] as usize
            };
        }
        i
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value[self.leaf_index(x)]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + go(t, t.left[i] as usize).max(go(t, t.right[i] as usize))
            }
        }
        go(self, 0)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    /// Per feature: row indices sorted by value.
    sorted: &'a [Vec<usize>],
    params: &'a GbdtParams,
    in_node: Vec<bool>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<SplitChoice> {
        let g_total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h_total: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let parent = self.score(g_total, h_total);
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<SplitChoice> = None;
        for (f, order) in self.sorted.iter().enumerate() {
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            let mut prev: Option<usize> = None;
            for &r in order.iter().filter(|&&r| self.in_node[r]) {
                if let Some(p) = prev {
                    let (lo, hi) = (self.x[p][f], self.x[r][f]);
                    if lo < hi && nl >= min_leaf && n - nl >= min_leaf {
                        let gain = 0.5
                            * (self.score(gl, hl) + self.score(g_total - gl, h_total - hl)
                                - parent);
                        if gain > self.params.min_gain
                            && best.as_ref().is_none_or(|b| gain > b.gain)
                        {
                            let mid = lo + (hi - lo) / 2.0;
                            let threshold = if lo < mid { mid } else { hi };
                            best = Some(SplitChoice {
                                feature: f,
                                threshold,
                                gain,
                            });
                        }
                    }
                }
                gl += self.grad[r];
                hl += self.hess[r];
                nl += 1;
                prev = Some(r);
            }
        }
        best
    }

    fn build(&mut self, tree: &mut Tree, rows: Vec<usize>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let node = tree.push_leaf(self.leaf_value(g, h));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return node;
        }
        rows.iter().for_each(|&r| self.in_node[r] = true);
        let split = self.best_split(&rows);
        rows.iter().for_each(|&r| self.in_node[r] = false);
        let Some(split) = split else {
            return node;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][split.feature] < split.threshold);
        let left = self.build(tree, left_rows, depth + 1);
        let right = self.build(tree, right_rows, depth + 1);
        tree.feature[node] = split.feature as i32;
        tree.threshold[node] = split.threshold;
        tree.left[node] = left as u32;
        tree.right[node] = right as u32;
        tree.value[node] = 0.0;
        node
    }
}

fn log_loss(raw: &[f64], y: &[bool]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&s, &t)| {
            // log(1 + e^{-s}) for positives, log(1 + e^{s}) for negatives
            let m = if t { -s } else { s };
            m.max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / raw.len().max(1) as f64
}

/// Outcome of boosting: base score and trees (already truncated to the best
/// validation round when early stopping is active).
pub struct Boosted {
    pub initial_score: f64,
    pub trees: Vec<Tree>,
    pub best_val_loss: Option<f64>,
}

/// Boosts on rows already in canonical order. `val` may be empty.
pub fn boost(
    train_x: &[Vec<f64>],
    train_y: &[bool],
    val_x: &[Vec<f64>],
    val_y: &[bool],
    params: &GbdtParams,
    seed: u64,
) -> Boosted {
    let n = train_x.len();
    let n_features = train_x.first().map_or(0, Vec::len);
    let pos = train_y.iter().filter(|&&y| y).count() as f64;
    let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let initial_score = logit(prior);

    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| train_x[a][f].total_cmp(&train_x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut raw = vec![initial_score; n];
    let mut raw_val = vec![initial_score; val_x.len()];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees: Vec<Tree> = Vec::new();
    let use_val = params.early_stopping_rounds > 0 && !val_x.is_empty();
    let mut best = (log_loss(&raw_val, val_y), 0usize);
    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    for round in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - f64::from(u8::from(train_y[i]));
            hess[i] = p * (1.0 - p);
        }
        let mut rows: Vec<usize> = (0..n).collect();
        if n_sub < n {
            rows.shuffle(&mut rng::indexed_stream(
                seed,
                "oracle-subsample",
                round as u64,
            ));
            rows.truncate(n_sub);
            rows.sort_unstable();
        }
        let mut builder = Builder {
            x: train_x,
            grad: &grad,
            hess: &hess,
            sorted: &sorted,
            params,
            in_node: vec![false; n],
        };
        let mut tree = Tree::new();
        builder.build(&mut tree, rows, 0);
        if tree.is_leaf_only() {
            log::debug!("boosting stopped at round {round}: no split improves the loss");
            break;
        }
        for (r, x) in raw.iter_mut().zip(train_x) {
            *r += params.learning_rate * tree.predict(x);
        }
        for (r, x) in raw_val.iter_mut().zip(val_x) {
            *r += params.learning_rate * tree.predict(x);
        }
        trees.push(tree);
        if use_val {
            let loss = log_loss(&raw_val, val_y);
            if loss < best.0 {
                best = (loss, trees.len());
            } else if trees.len() - best.1 >= params.early_stopping_rounds {
                break;
            }
        }
    }
    if use_val {
        trees.truncate(best.1);
    }
    Boosted {
        initial_score,
        trees,
        best_val_loss: use_val.then_some(best.0),
    }
}
