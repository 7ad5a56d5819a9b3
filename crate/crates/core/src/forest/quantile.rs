use super::{ForestError, WeightVector};

/// Slack on cumulative mass comparisons so that sums like `k * (1/n)` meet `k/n`.
pub(crate) const CDF_TOL: f64 = 1e-12;

/// Generalized inverse of the empirical CDF of an already sorted sample.
pub fn empirical_quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let m = sorted.len();
    let k = ((tau - CDF_TOL) * m as f64).ceil().max(1.0) as usize;
    sorted[k.min(m) - 1]
}

/// Smallest response value whose cumulative weight reaches `tau`.
///
/// This is the minimizer of the weighted quantile (check) loss, taking the
/// left end when the minimizer is an interval.
pub fn weighted_quantile(weights: &WeightVector, y: &[f64], tau: f64) -> Result<f64, ForestError> {
    check_tau(tau)?;
    if weights.len() != y.len() {
        return Err(ForestError::DimensionMismatch {
            expected: weights.len(),
            got: y.len(),
        });
    }
    let mut support: Vec<(f64, f64)> = y
        .iter()
        .zip(weights.as_slice())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| (v, w))
        .collect();
    if support.is_empty() {
        return Err(ForestError::ZeroWeight);
    }
    support.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    for &(v, w) in &support {
        cum += w;
        if cum >= tau - CDF_TOL {
            return Ok(v);
        }
    }
    Ok(support[support.len() - 1].0)
}

/// Responses pre-sorted once so that many weighted quantiles over the same
/// sample cost O(n) each instead of a sort per query.
#[derive(Debug, Clone)]
pub struct SortedResponse {
    order: Vec<u32>,
}

impl SortedResponse {
    pub fn new(y: &[f64]) -> Self {
        let mut order: Vec<u32> = (0..y.len() as u32).collect();
        order.sort_by(|&a, &b| y[a as usize].total_cmp(&y[b as usize]));
        Self { order }
    }

    /// Same value as [`weighted_quantile`] for the sample this was built from.
    pub fn quantile(&self, weights: &[f64], y: &[f64], tau: f64) -> f64 {
        let mut cum = 0.0;
        let mut last = f64::NAN;
        for &i in &self.order {
            let w = weights[i as usize];
            if w > 0.0 {
                cum += w;
                last = y[i as usize];
                if cum >= tau - CDF_TOL {
                    return last;
                }
            }
        }
        last
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<(), ForestError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(ForestError::InvalidProbability(tau))
    }
}
