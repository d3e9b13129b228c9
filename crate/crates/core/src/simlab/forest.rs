//! Bagged classification trees used as the audited risk model.
//!
//! Each tree is grown on a bootstrap sample with Gini splits, a depth limit
//! and a random feature subset per node. The score is the mean leaf
//! probability across trees; `S = 1{score ≥ threshold}` where the threshold
//! makes a chosen share of training rows positive.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training outcome has a single class")]
    DegenerateOutcome,
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid forest setting: {0}")]
    InvalidParameter(String),
}

fn default_trees() -> usize {
    100
}
fn default_depth() -> usize {
    4
}
fn default_rate() -> f64 {
    0.2
}
fn default_min_leaf() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Features tried per split; `ceil(sqrt(p))` when absent.
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    /// Share of training rows flagged positive.
    #[serde(default = "default_rate")]
    pub positive_rate: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: default_trees(),
            max_depth: default_depth(),
            mtry: None,
            min_leaf: default_min_leaf(),
            positive_rate: default_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Grower<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl<R: Rng> Grower<'_, R> {
    /// Best `(feature, threshold, impurity)` over a random feature subset.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let p = self.x[0].len();
        let n = rows.len() as f64;
        let total_pos = rows.iter().filter(|&&i| self.y[i]).count() as f64;
        let parent = gini(total_pos, n) * n;
        let mut best: Option<(usize, f64, f64)> = None;
        let features = sample(&mut self.rng, p, self.mtry.min(p));
        let mut sorted = rows.to_vec();
        for feature in features.iter() {
            sorted.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
            let mut left_pos = 0.0;
            for k in 0..sorted.len() - 1 {
                if self.y[sorted[k]] {
                    left_pos += 1.0;
                }
                let left_n = (k + 1) as f64;
                let (lo, hi) = (self.x[sorted[k]][feature], self.x[sorted[k + 1]][feature]);
                if lo == hi || k + 1 < self.cfg.min_leaf || sorted.len() - k - 1 < self.cfg.min_leaf {
                    continue;
                }
                let impurity = gini(left_pos, left_n) * left_n + gini(total_pos - left_pos, n - left_n) * (n - left_n);
                if impurity < parent - 1e-12 && best.is_none_or(|b| impurity < b.2) {
                    best = Some((feature, 0.5 * (lo + hi), impurity));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let leaf = Node::Leaf(pos as f64 / rows.len() as f64);
        self.nodes.push(leaf);
        if depth >= self.cfg.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        if let Some((feature, threshold)) = self.best_split(rows) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
            let left = self.grow(&l, depth + 1);
            let right = self.grow(&r, depth + 1);
            self.nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    trees: Vec<Tree>,
    pub threshold: f64,
    pub n_features: usize,
}

impl RiskModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) >= self.threshold
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Score cut-off putting `round(rate·n)` of `scores` (at least one) at or
/// above it.
pub fn positive_rate_threshold(scores: &[f64], rate: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((rate * sorted.len() as f64).round() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn train_risk_model(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig, seed: u64) -> Result<RiskModel, ForestError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ForestError::EmptyData);
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(ForestError::DegenerateOutcome);
    }
    if cfg.trees == 0 || !(cfg.positive_rate > 0.0 && cfg.positive_rate <= 1.0) {
        return Err(ForestError::InvalidParameter(format!(
            "trees = {}, positive_rate = {}",
            cfg.trees, cfg.positive_rate
        )));
    }
    let p = x[0].len();
    let mtry = cfg.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).max(1);
    let n = x.len();
    let trees: Vec<Tree> = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut g = Grower {
                x,
                y,
                cfg,
                mtry,
                rng,
                nodes: Vec::new(),
            };
            g.grow(&rows, 0);
            Tree { nodes: g.nodes }
        })
        .collect();
    let mut model = RiskModel {
        trees,
        threshold: 0.0,
        n_features: p,
    };
    let scores: Vec<f64> = x.iter().map(|r| model.score(r)).collect();
    model.threshold = positive_rate_threshold(&scores, cfg.positive_rate);
    Ok(model)
}
