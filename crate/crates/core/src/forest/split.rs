//! Split placement for generalized quantile trees: node responses are
//! relabeled by quantile bracket and the axis-aligned split with the largest
//! multiclass Gini decrease wins.

use super::quantile::empirical_quantile_sorted;
use super::ForestError;
use crate::data::TrainingSet;

/// Labels each response by how many node-level quantiles lie strictly below it.
pub fn relabel_split_labels(node_y: &[f64], levels: &[f64]) -> Result<Vec<u8>, ForestError> {
    if node_y.is_empty() {
        return Err(ForestError::EmptyNode);
    }
    let mut sorted = node_y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = levels
        .iter()
        .map(|&tau| empirical_quantile_sorted(&sorted, tau))
        .collect();
    Ok(node_y
        .iter()
        .map(|&v| thresholds.iter().filter(|&&q| q < v).count() as u8)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub variable: usize,
    pub value: f64,
}

/// Extra feasibility condition: each child must keep at least `min_size` of
/// the given rows (the honest prediction set of the node).
#[derive(Debug, Clone, Copy)]
pub struct LeafConstraint<'a> {
    pub rows: &'a [u32],
    pub min_size: usize,
}

/// Best Gini split of `rows` (with class `labels`) over `candidates`.
///
/// Children must each receive at least `ceil(balance_fraction * rows.len())`
/// of `rows`. Thresholds are midpoints between adjacent distinct values of the
/// node; with a [`LeafConstraint`] the constrained rows' predictor values
/// also delimit thresholds (their responses are never read). Observations
/// with `x <= value` go left. Returns `None` when the labels are pure or no
/// split satisfies the constraints. Ties keep the first candidate in scan
/// order.
pub fn best_split(
    data: &TrainingSet,
    rows: &[u32],
    labels: &[u8],
    candidates: &[usize],
    balance_fraction: f64,
    leaf: Option<LeafConstraint<'_>>,
) -> Option<SplitRule> {
    debug_assert_eq!(rows.len(), labels.len());
    let m = rows.len();
    if m < 2 {
        return None;
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut total = vec![0usize; classes];
    for &l in labels {
        total[l as usize] += 1;
    }
    if total.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let min_child = ((balance_fraction * m as f64).ceil() as usize).max(1);
    let (pred_rows, min_pred): (&[u32], usize) = leaf.map_or((&[], 0), |c| (c.rows, c.min_size));
    let n_pred = pred_rows.len();

    // (x, label) for split rows; label NONE marks a constrained row.
    const NONE: u8 = u8::MAX;
    let mut events: Vec<(f64, u8)> = Vec::with_capacity(m + n_pred);
    let mut left = vec![0usize; classes];
    let mut best: Option<(f64, SplitRule)> = None;

    for &var in candidates {
        events.clear();
        events.extend(rows.iter().zip(labels).map(|(&r, &l)| (data.value(r as usize, var), l)));
        events.extend(pred_rows.iter().map(|&r| (data.value(r as usize, var), NONE)));
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0);
        let (mut split_left, mut pred_left) = (0usize, 0usize);

        for i in 1..events.len() {
            match events[i - 1].1 {
                NONE => pred_left += 1,
                l => {
                    left[l as usize] += 1;
                    split_left += 1;
                }
            }
            let (lo, hi) = (events[i - 1].0, events[i].0);
            if lo == hi
                || split_left < min_child
                || m - split_left < min_child
                || pred_left < min_pred
                || n_pred - pred_left < min_pred
            {
                continue;
            }
            let mut value = lo + (hi - lo) / 2.0;
            if value >= hi {
                value = lo;
            }
            let (nl, nr) = (split_left as f64, (m - split_left) as f64);
            let mut score = 0.0;
            for (k, &l) in left.iter().enumerate() {
                let r = total[k] - l;
                score += (l * l) as f64 / nl + (r * r) as f64 / nr;
            }
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, SplitRule { variable: var, value }));
            }
        }
    }
    best.map(|(_, rule)| rule)
}

/// Split of `rows` near their median on the first candidate that admits one
/// with at least `min_size` rows per side. Reads predictor values only.
pub(crate) fn median_split(
    data: &TrainingSet,
    rows: &[u32],
    candidates: &[usize],
    min_size: usize,
) -> Option<SplitRule> {
    let c = rows.len();
    if min_size == 0 || c < 2 * min_size {
        return None;
    }
    let mut xs = Vec::with_capacity(c);
    for &var in candidates {
        xs.clear();
        xs.extend(rows.iter().map(|&r| data.value(r as usize, var)));
        xs.sort_by(f64::total_cmp);
        let best = (min_size..=c - min_size)
            .filter(|&i| xs[i - 1] < xs[i])
            .min_by_key(|&i| i.abs_diff(c / 2));
        if let Some(i) = best {
            let (lo, hi) = (xs[i - 1], xs[i]);
            let mut value = lo + (hi - lo) / 2.0;
            if value >= hi {
                value = lo;
            }
            return Some(SplitRule { variable: var, value });
        }
    }
    None
}

/// Gini impurity decrease of a split, used for diagnostics and tests.
pub fn gini_decrease(labels_left: &[u8], labels_right: &[u8]) -> f64 {
    fn gini(labels: &[u8]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let mut counts = [0usize; 256];
        for &l in labels {
            counts[l as usize] += 1;
        }
        let n = labels.len() as f64;
        1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
    }
    let all: Vec<u8> = labels_left.iter().chain(labels_right).copied().collect();
    let n = all.len() as f64;
    gini(&all)
        - labels_left.len() as f64 / n * gini(labels_left)
        - labels_right.len() as f64 / n * gini(labels_right)
}
