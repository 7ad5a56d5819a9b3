//! Honest, subsampled generalized quantile forests and the similarity
//! weights they induce.

mod quantile;
mod split;
mod tree;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{DataError, TrainingSet};

pub use quantile::{empirical_quantile_sorted, weighted_quantile, SortedResponse};
pub(crate) use quantile::check_tau;
pub use split::{best_split, gini_decrease, relabel_split_labels, LeafConstraint, SplitRule};
pub use tree::{Node, Tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid forest parameter: {0}")]
    InvalidParams(String),
    #[error("min_node_size {min_node_size} exceeds the {prediction_set} prediction rows of a tree")]
    MinNodeSizeTooLarge {
        min_node_size: usize,
        prediction_set: usize,
    },
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite predictor value")]
    NonFinite,
    #[error("cannot relabel an empty node")]
    EmptyNode,
    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),
    #[error("weights are all zero")]
    ZeroWeight,
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
}

/// Hyperparameters of a generalized quantile forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Rows drawn without replacement per tree; `None` means `ceil(n / 2)`.
    pub subsample_size: Option<usize>,
    pub honest: bool,
    /// Leaves hold between this many and twice this many minus one
    /// prediction rows.
    pub min_node_size: usize,
    /// Candidate variables per split; `None` means `min(ceil(sqrt(p)) + 20, p)`.
    pub mtry: Option<usize>,
    pub balance_fraction: f64,
    pub split_quantile_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 2000,
            subsample_size: None,
            honest: true,
            min_node_size: 40,
            mtry: None,
            balance_fraction: 0.1,
            split_quantile_levels: vec![0.1, 0.5, 0.9],
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn resolved_subsample_size(&self, n: usize) -> usize {
        self.subsample_size.unwrap_or_else(|| n.div_ceil(2).min(n))
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt().ceil() as usize + 20).min(p))
    }

    pub fn prediction_set_size(&self, n: usize) -> usize {
        let s = self.resolved_subsample_size(n);
        if self.honest {
            s / 2
        } else {
            s
        }
    }

    pub fn with_trees(mut self, num_trees: usize) -> Self {
        self.num_trees = num_trees;
        self
    }

    pub fn with_min_node_size(mut self, kappa: usize) -> Self {
        self.min_node_size = kappa;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<(), ForestError> {
        let bad = |msg: String| Err(ForestError::InvalidParams(msg));
        if self.num_trees == 0 {
            return bad("num_trees must be positive".into());
        }
        let s = self.resolved_subsample_size(n);
        if s == 0 || s > n {
            return bad(format!("subsample_size {s} must be in 1..={n}"));
        }
        if self.honest && s < 2 {
            return bad("honest trees need a subsample of at least 2".into());
        }
        if self.min_node_size == 0 {
            return bad("min_node_size must be positive".into());
        }
        let mtry = self.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return bad(format!("mtry {mtry} must be in 1..={p}"));
        }
        if !(self.balance_fraction > 0.0 && self.balance_fraction <= 0.2) {
            return bad(format!("balance_fraction {} must be in (0, 0.2]", self.balance_fraction));
        }
        let levels = &self.split_quantile_levels;
        if levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("split_quantile_levels must be strictly increasing in (0, 1)".into());
        }
        if levels.len() > 254 {
            return bad("too many split quantile levels".into());
        }
        let prediction_set = self.prediction_set_size(n);
        if self.min_node_size > prediction_set {
            return Err(ForestError::MinNodeSizeTooLarge {
                min_node_size: self.min_node_size,
                prediction_set,
            });
        }
        Ok(())
    }
}

/// Non-negative weights over training rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self, ForestError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ForestError::InvalidWeights("entries must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(ForestError::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Fitted forest. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    params: ForestParams,
    training_n: usize,
    p: usize,
}

impl Forest {
    /// Reassembles a forest from stored parts, checking index bounds.
    pub fn from_parts(trees: Vec<Tree>, params: ForestParams, training_n: usize, p: usize) -> Result<Self, ForestError> {
        if trees.is_empty() {
            return Err(ForestError::InvalidParams("a forest needs at least one tree".into()));
        }
        for tree in &trees {
            let out_of_range = tree
                .prediction_indices()
                .iter()
                .chain(tree.split_indices())
                .chain(tree.leaves().flatten())
                .any(|&i| i as usize >= training_n);
            let bad_node = tree.nodes().iter().any(|node| match node {
                Node::Split {
                    variable, left, right, ..
                } => *variable >= p || *left >= tree.nodes().len() || *right >= tree.nodes().len(),
                Node::Leaf { members } => members.is_empty(),
            });
            if out_of_range || bad_node {
                return Err(ForestError::InvalidParams("tree structure is inconsistent".into()));
            }
        }
        Ok(Self {
            trees,
            params,
            training_n,
            p,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn training_n(&self) -> usize {
        self.training_n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn weights(&self, x: &[f64]) -> Result<WeightVector, ForestError> {
        similarity_weights(self, x)
    }

    /// Weights without the validation pass; used on hot paths.
    pub(crate) fn raw_weights(&self, x: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.training_n];
        for tree in &self.trees {
            let members = tree.leaf_members(x);
            let share = 1.0 / members.len() as f64;
            for &i in members {
                w[i as usize] += share;
            }
        }
        let scale = 1.0 / self.trees.len() as f64;
        w.iter_mut().for_each(|v| *v *= scale);
        w
    }
}

/// Grows `params.num_trees` trees in parallel. Each tree draws from its own
/// counter-based stream, so the result does not depend on the worker count.
pub fn fit_forest(data: &TrainingSet, params: &ForestParams) -> Result<Forest, ForestError> {
    params.validate(data.n(), data.p())?;
    let trees: Vec<Tree> = (0..params.num_trees as u64)
        .into_par_iter()
        .map(|b| Tree::grow(data, params, b))
        .collect();
    Ok(Forest {
        trees,
        params: params.clone(),
        training_n: data.n(),
        p: data.p(),
    })
}

/// Average over trees of `1{i in leaf(x)} / |leaf(x)|` over prediction rows.
pub fn similarity_weights(forest: &Forest, x: &[f64]) -> Result<WeightVector, ForestError> {
    if x.len() != forest.p {
        return Err(ForestError::DimensionMismatch {
            expected: forest.p,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ForestError::NonFinite);
    }
    Ok(WeightVector(forest.raw_weights(x)))
}
