use rand::seq::{index, SliceRandom};

use super::split::{best_split, median_split, relabel_split_labels, LeafConstraint};
use super::ForestParams;
use crate::data::TrainingSet;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        variable: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        members: Vec<u32>,
    },
}

/// One honest tree: splits placed with `split_indices`, leaves populated with
/// `prediction_indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    prediction_indices: Vec<u32>,
    split_indices: Vec<u32>,
}

impl Tree {
    pub fn from_parts(nodes: Vec<Node>, prediction_indices: Vec<u32>, split_indices: Vec<u32>) -> Self {
        Self {
            nodes,
            prediction_indices,
            split_indices,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn prediction_indices(&self) -> &[u32] {
        &self.prediction_indices
    }

    pub fn split_indices(&self) -> &[u32] {
        &self.split_indices
    }

    /// Prediction-set members of the leaf that `x` falls into.
    pub fn leaf_members(&self, x: &[f64]) -> &[u32] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    variable,
                    value,
                    left,
                    right,
                } => id = if x[*variable] <= *value { *left } else { *right },
                Node::Leaf { members } => return members,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { members } => Some(members.as_slice()),
            Node::Split { .. } => None,
        })
    }

    /// Split-variable/threshold skeleton, ignoring leaf membership.
    pub fn topology(&self) -> Vec<(usize, f64, usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split {
                    variable,
                    value,
                    left,
                    right,
                } => Some((*variable, *value, *left, *right)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub(crate) fn grow(data: &TrainingSet, params: &ForestParams, tree_index: u64) -> Self {
        let n = data.n();
        let s = params.resolved_subsample_size(n);
        let mtry = params.resolved_mtry(data.p());
        let mut rng = stream_rng(params.seed, tree_index);

        let mut subsample: Vec<u32> = index::sample(&mut rng, n, s).into_iter().map(|i| i as u32).collect();
        subsample.shuffle(&mut rng);
        let (prediction_indices, split_indices) = if params.honest {
            let half = s / 2;
            (subsample[..half].to_vec(), subsample[half..].to_vec())
        } else {
            (subsample.clone(), subsample)
        };

        let mut nodes = vec![Node::Leaf { members: Vec::new() }];
        let mut stack = vec![(0usize, prediction_indices.clone(), split_indices.clone())];
        let kappa = params.min_node_size;
        let mut node_y = Vec::new();
        let mut candidates = Vec::with_capacity(mtry);

        while let Some((id, pred, split)) = stack.pop() {
            let mut rule = None;
            if pred.len() >= 2 * kappa {
                candidates.clear();
                candidates.extend(index::sample(&mut rng, data.p(), mtry));
                candidates.sort_unstable();
                if split.len() >= 2 {
                    node_y.clear();
                    node_y.extend(split.iter().map(|&r| data.y()[r as usize]));
                    let labels =
                        relabel_split_labels(&node_y, &params.split_quantile_levels).expect("non-empty node");
                    let constraint = LeafConstraint {
                        rows: &pred,
                        min_size: kappa,
                    };
                    rule = best_split(
                        data,
                        &split,
                        &labels,
                        &candidates,
                        params.balance_fraction,
                        Some(constraint),
                    );
                }
                // No admissible Gini split: fall back to the prediction-row median.
                if rule.is_none() {
                    rule = median_split(data, &pred, &candidates, kappa);
                }
            }
            match rule {
                None => nodes[id] = Node::Leaf { members: pred },
                Some(rule) => {
                    let goes_left = |&r: &u32| data.value(r as usize, rule.variable) <= rule.value;
                    let (pred_l, pred_r): (Vec<u32>, Vec<u32>) = pred.iter().partition(|r| goes_left(r));
                    let (split_l, split_r): (Vec<u32>, Vec<u32>) = split.iter().partition(|r| goes_left(r));
                    let left = nodes.len();
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes[id] = Node::Split {
                        variable: rule.variable,
                        value: rule.value,
                        left,
                        right: left + 1,
                    };
                    // Right first so the left subtree is numbered first.
                    stack.push((left + 1, pred_r, split_r));
                    stack.push((left, pred_l, split_l));
                }
            }
        }
        Self {
            nodes,
            prediction_indices,
            split_indices,
        }
    }
}
