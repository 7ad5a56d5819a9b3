use super::ErfError;
use crate::gpd::{GpdError, GpdParams, XI_ZERO};

fn check_levels(tau_n: f64, tau: f64) -> Result<(), ErfError> {
    if !(tau_n > 0.0 && tau_n < 1.0) {
        return Err(ErfError::InvalidLevel(tau_n));
    }
    if !(tau >= tau_n && tau < 1.0) {
        return Err(ErfError::LevelNotExtreme { tau, tau_n });
    }
    Ok(())
}

/// `q + sigma/xi * (((1 - tau)/(1 - tau_n))^(-xi) - 1)`, exponential limit
/// `q + sigma * ln((1 - tau_n)/(1 - tau))` for vanishing shape.
pub fn gpd_extrapolate(q: f64, theta: &GpdParams, tau_n: f64, tau: f64) -> Result<f64, ErfError> {
    check_levels(tau_n, tau)?;
    let log_ratio = ((1.0 - tau_n) / (1.0 - tau)).ln();
    if theta.xi.abs() < XI_ZERO {
        return Ok(q + theta.sigma * log_ratio);
    }
    Ok(q + theta.sigma * (theta.xi * log_ratio).exp_m1() / theta.xi)
}

/// `q * ((1 - tau)/(1 - tau_n))^(-xi)`.
pub fn weissman_quantile(q: f64, xi: f64, tau_n: f64, tau: f64) -> Result<f64, ErfError> {
    check_levels(tau_n, tau)?;
    if !(q > 0.0) {
        return Err(ErfError::NonPositiveThreshold(q));
    }
    Ok(q * ((1.0 - tau) / (1.0 - tau_n)).powf(-xi))
}

/// `(n/k) sum_i w_i 1{Z_i > 0} log(1 + Z_i / q)`.
pub fn hill_from_weights(weights: &[f64], exceedances: &[f64], q: f64, n_over_k: f64) -> Result<f64, ErfError> {
    if !(q > 0.0) {
        return Err(ErfError::NonPositiveThreshold(q));
    }
    let s: f64 = weights
        .iter()
        .zip(exceedances)
        .filter(|(_, &z)| z > 0.0)
        .map(|(&w, &z)| w * (z / q).ln_1p())
        .sum();
    Ok(n_over_k * s)
}

/// Mean of `log(y_i / q_i)` over rows with a positive exceedance, weights
/// renormalized over those rows.
pub fn exp_shape_from_weights(
    weights: &[f64],
    y: &[f64],
    thresholds: &[f64],
    exceedances: &[f64],
) -> Result<f64, ErfError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..weights.len() {
        if exceedances[i] > 0.0 && weights[i] > 0.0 {
            if !(thresholds[i] > 0.0) {
                return Err(ErfError::NonPositiveThreshold(thresholds[i]));
            }
            num += weights[i] * (y[i] / thresholds[i]).ln();
            den += weights[i];
        }
    }
    if den <= 0.0 {
        return Err(GpdError::NoData.into());
    }
    Ok(num / den)
}
