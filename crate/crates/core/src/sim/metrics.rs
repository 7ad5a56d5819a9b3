use super::SimError;

fn same_len(a: usize, b: usize) -> Result<(), SimError> {
    if a == b && a > 0 {
        Ok(())
    } else {
        Err(SimError::LengthMismatch(a, b))
    }
}

/// Mean squared difference between estimates and truths over test points.
pub fn ise(estimates: &[f64], truths: &[f64]) -> Result<f64, SimError> {
    same_len(estimates.len(), truths.len())?;
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / truths.len() as f64)
}

/// MISE over repetitions split into squared bias and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MiseDecomposition {
    pub mise: f64,
    /// Mean over test points of the squared bias.
    pub bias_sq: f64,
    /// Mean over test points of the variance (divisor m).
    pub variance: f64,
    pub bias: Vec<f64>,
    pub pointwise_variance: Vec<f64>,
}

/// Bias-variance decomposition of `m >= 2` repetitions of estimates.
pub fn mise_bias_variance(estimates: &[Vec<f64>], truths: &[f64]) -> Result<MiseDecomposition, SimError> {
    let m = estimates.len();
    if m < 2 {
        return Err(SimError::TooFewRepetitions { needed: 2, got: m });
    }
    for row in estimates {
        same_len(row.len(), truths.len())?;
    }
    let n = truths.len();
    let mut bias = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for j in 0..n {
        let mean = estimates.iter().map(|r| r[j]).sum::<f64>() / m as f64;
        bias.push(mean - truths[j]);
        var.push(estimates.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m as f64);
    }
    let bias_sq = bias.iter().map(|b| b * b).sum::<f64>() / n as f64;
    let variance = var.iter().sum::<f64>() / n as f64;
    Ok(MiseDecomposition { mise: bias_sq + variance, bias_sq, variance, bias, pointwise_variance: var })
}

/// Calibration statistic `(#{y < q} - n tau) / sqrt(n tau (1 - tau))`.
pub fn wang_loss(predicted: &[f64], y: &[f64], tau: f64) -> Result<f64, SimError> {
    same_len(predicted.len(), y.len())?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SimError::InvalidProbability(tau));
    }
    let n = y.len() as f64;
    let below = predicted.iter().zip(y).filter(|(q, y)| y < q).count() as f64;
    Ok((below - n * tau) / (n * tau * (1.0 - tau)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ise_examples() {
        assert_eq!(ise(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((ise(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(ise(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert!(ise(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let d = mise_bias_variance(&[vec![0.0], vec![2.0]], &[0.0]).unwrap();
        assert_eq!((d.bias[0], d.pointwise_variance[0], d.mise), (1.0, 1.0, 2.0));
        let d = mise_bias_variance(&[vec![1.0, 3.0], vec![1.0, 3.0]], &[0.0, 1.0]).unwrap();
        assert_eq!(d.variance, 0.0);
        assert_eq!(d.mise, (1.0 + 4.0) / 2.0);
        let d = mise_bias_variance(&[vec![-1.0], vec![1.0]], &[0.0]).unwrap();
        assert_eq!(d.bias_sq, 0.0);
        assert!(mise_bias_variance(&[vec![1.0]], &[1.0]).is_err());
    }

    #[test]
    fn wang_examples() {
        let q = vec![1.0; 100];
        let mut y = vec![0.0; 90];
        y.extend(vec![2.0; 10]);
        assert_eq!(wang_loss(&q, &y, 0.9).unwrap(), 0.0);
        let all_below = wang_loss(&q, &[0.0; 100], 0.9).unwrap();
        assert!((all_below - 10.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mise_equals_mean_ise(
            reps in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 5), 2..8),
            truths in proptest::collection::vec(-10.0f64..10.0, 5),
        ) {
            let d = mise_bias_variance(&reps, &truths).unwrap();
            let mean_ise = reps.iter().map(|r| ise(r, &truths).unwrap()).sum::<f64>() / reps.len() as f64;
            prop_assert!((d.mise - mean_ise).abs() < 1e-9);
            prop_assert!((d.mise - d.bias_sq - d.variance).abs() < 1e-12);
        }
    }
}
