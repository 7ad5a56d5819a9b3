//! Generalized Pareto distribution: distribution functions, deviance, and
//! weighted maximum-likelihood fitting.

mod fit;
mod optim;

use thiserror::Error;

pub use fit::{
    grimshaw_fit, grimshaw_roots, penalized_fit, penalized_foc_residual, unconditional_fit, FitPath,
    GpdFit, PenaltyConfig, ThetaBox,
};

/// Below this magnitude the shape is treated as zero (exponential limit).
pub const XI_ZERO: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpdError {
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("exceedance must be non-negative, got {0}")]
    NegativeExceedance(f64),
    #[error("deviance needs a strictly positive exceedance, got {0}")]
    NonPositiveExceedance(f64),
    #[error("probability {0} is outside the allowed range")]
    InvalidProbability(f64),
    #[error("the quantile at probability 1 is unbounded for shape {0} >= 0")]
    UnboundedQuantile(f64),
    #[error("no positive exceedance carries positive weight")]
    NoData,
    #[error("need at least 2 positive-weight exceedances, got {0}")]
    NotIdentifiable(usize),
    #[error("invalid exceedance sample: {0}")]
    InvalidSample(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
}

/// Scale `sigma` and shape `xi` of a generalized Pareto distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self, GpdError> {
        if sigma > 0.0 && sigma.is_finite() && xi.is_finite() {
            Ok(Self { sigma, xi })
        } else {
            Err(GpdError::NonPositiveScale(sigma))
        }
    }

    /// Upper endpoint of the support (`+inf` unless `xi < 0`).
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < -XI_ZERO {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }
}

fn check_scale(theta: &GpdParams) -> Result<(), GpdError> {
    if theta.sigma > 0.0 {
        Ok(())
    } else {
        Err(GpdError::NonPositiveScale(theta.sigma))
    }
}

/// `1 - (1 + xi z / sigma)_+^(-1/xi)`.
pub fn gpd_cdf(z: f64, theta: &GpdParams) -> Result<f64, GpdError> {
    check_scale(theta)?;
    if z < 0.0 || z.is_nan() {
        return Err(GpdError::NegativeExceedance(z));
    }
    let GpdParams { sigma, xi } = *theta;
    if xi.abs() < XI_ZERO {
        return Ok(-(-z / sigma).exp_m1());
    }
    let u = xi * z / sigma;
    if u <= -1.0 {
        return Ok(1.0);
    }
    Ok(-(-u.ln_1p() / xi).exp_m1())
}

/// Inverse of [`gpd_cdf`] on `[0, 1)`; at `p = 1` only bounded tails have a quantile.
pub fn gpd_quantile(p: f64, theta: &GpdParams) -> Result<f64, GpdError> {
    check_scale(theta)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(GpdError::InvalidProbability(p));
    }
    let GpdParams { sigma, xi } = *theta;
    if p == 1.0 {
        return if xi < -XI_ZERO {
            Ok(-sigma / xi)
        } else {
            Err(GpdError::UnboundedQuantile(xi))
        };
    }
    let log_survival = (-p).ln_1p();
    if xi.abs() < XI_ZERO {
        Ok(-sigma * log_survival)
    } else {
        Ok(sigma / xi * (-xi * log_survival).exp_m1())
    }
}

/// Negative log-density of a positive exceedance; `+inf` outside the support.
pub fn gpd_deviance(z: f64, theta: &GpdParams) -> Result<f64, GpdError> {
    check_scale(theta)?;
    if z <= 0.0 || z.is_nan() {
        return Err(GpdError::NonPositiveExceedance(z));
    }
    Ok(deviance_unchecked(z, theta.sigma, theta.xi))
}

#[inline]
pub(crate) fn deviance_unchecked(z: f64, sigma: f64, xi: f64) -> f64 {
    if xi.abs() < XI_ZERO {
        return sigma.ln() + z / sigma;
    }
    let u = xi * z / sigma;
    if u <= -1.0 {
        return f64::INFINITY;
    }
    sigma.ln() + (1.0 + 1.0 / xi) * u.ln_1p()
}

/// Exceedances `z >= 0` with aligned non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceSample {
    z: Vec<f64>,
    weights: Vec<f64>,
}

impl ExceedanceSample {
    pub fn new(z: Vec<f64>, weights: Vec<f64>) -> Result<Self, GpdError> {
        if z.len() != weights.len() {
            return Err(GpdError::InvalidSample(format!(
                "{} exceedances but {} weights",
                z.len(),
                weights.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GpdError::InvalidSample("exceedances must be finite and >= 0".into()));
        }
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GpdError::InvalidSample("weights must be finite and >= 0".into()));
        }
        Ok(Self { z, weights })
    }

    pub fn uniform(z: Vec<f64>) -> Result<Self, GpdError> {
        let w = vec![1.0; z.len()];
        Self::new(z, w)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total weight on strictly positive exceedances.
    pub fn positive_mass(&self) -> f64 {
        self.z
            .iter()
            .zip(&self.weights)
            .filter(|(z, _)| **z > 0.0)
            .map(|(_, w)| w)
            .sum()
    }

    /// Positive exceedances with positive weight, weights renormalized to one.
    pub(crate) fn compress(&self) -> Result<Compressed, GpdError> {
        let mut z = Vec::new();
        let mut w = Vec::new();
        for (&zi, &wi) in self.z.iter().zip(&self.weights) {
            if zi > 0.0 && wi > 0.0 {
                z.push(zi);
                w.push(wi);
            }
        }
        let total: f64 = w.iter().sum();
        if z.is_empty() || total <= 0.0 {
            return Err(GpdError::NoData);
        }
        w.iter_mut().for_each(|v| *v /= total);
        Ok(Compressed { z, w })
    }
}

/// Positive part of a sample with normalized weights.
#[derive(Debug, Clone)]
pub(crate) struct Compressed {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
}

impl Compressed {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn mean(&self) -> f64 {
        self.z.iter().zip(&self.w).map(|(z, w)| z * w).sum()
    }

    pub fn min(&self) -> f64 {
        self.z.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.z.iter().copied().fold(0.0, f64::max)
    }

    /// Normalized-weight deviance `sum w~ l(z)`.
    pub fn nll(&self, sigma: f64, xi: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::INFINITY;
        }
        if xi.abs() < XI_ZERO {
            let s: f64 = self.z.iter().zip(&self.w).map(|(z, w)| w * z).sum();
            return sigma.ln() + s / sigma;
        }
        if xi < 0.0 && xi * self.max() / sigma <= -1.0 {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for (&z, &w) in self.z.iter().zip(&self.w) {
            acc += w * (xi * z / sigma).ln_1p();
        }
        sigma.ln() + (1.0 + 1.0 / xi) * acc
    }

    /// `(a, c)` with `a = sum w~ log(1 + t z)` and `c = sum w~ t z / (1 + t z)`,
    /// so that `f = 1 + a`, `g = 1 - c`, and `f g - 1 = a - c - a c` without
    /// cancellation near `t = 0`.
    pub fn log_and_ratio(&self, t: f64) -> (f64, f64) {
        let mut a = 0.0;
        let mut c = 0.0;
        for (&z, &w) in self.z.iter().zip(&self.w) {
            let tz = t * z;
            a += w * tz.ln_1p();
            c += w * tz / (1.0 + tz);
        }
        (a, c)
    }
}

/// Weighted deviance `sum_i w_i l(z_i)` over strictly positive exceedances.
pub fn weighted_nll(theta: &GpdParams, sample: &ExceedanceSample) -> Result<f64, GpdError> {
    check_scale(theta)?;
    if sample.positive_mass() <= 0.0 {
        return Err(GpdError::NoData);
    }
    let mut total = 0.0;
    for (&z, &w) in sample.z.iter().zip(&sample.weights) {
        if z > 0.0 && w > 0.0 {
            total += w * deviance_unchecked(z, theta.sigma, theta.xi);
        }
    }
    Ok(total)
}

/// The pair `(f(t), g(t))` of the one-dimensional likelihood reduction.
pub fn fn_gn_eval(t: f64, sample: &ExceedanceSample) -> Result<(f64, f64), GpdError> {
    if !(t > 0.0) {
        return Err(GpdError::InvalidSample(format!("t must be positive, got {t}")));
    }
    let c = sample.compress()?;
    let (a, ratio) = c.log_and_ratio(t);
    Ok((1.0 + a, 1.0 - ratio))
}
