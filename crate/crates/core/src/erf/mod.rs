//! Extremal random forest: intermediate quantiles from a quantile forest,
//! exceedances above them, and a forest-localized GPD fit for extrapolation.

mod extrapolate;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::TrainingSet;
use crate::forest::{check_tau, fit_forest, Forest, ForestError, ForestParams, SortedResponse};
use crate::gpd::{penalized_fit, unconditional_fit, ExceedanceSample, GpdError, GpdFit, GpdParams, PenaltyConfig, ThetaBox};
use crate::rng::derive_seed;

pub use extrapolate::{exp_shape_from_weights, gpd_extrapolate, hill_from_weights, weissman_quantile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErfError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Gpd(#[from] GpdError),
    #[error("intermediate level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("no training response exceeds its intermediate quantile; lower tau_n")]
    NoExceedances,
    #[error("target level {tau} must exceed the intermediate level {tau_n}; use the intermediate quantile for lower levels")]
    LevelNotExtreme { tau: f64, tau_n: f64 },
    #[error("Hill-type estimators need a positive intermediate quantile, got {0}")]
    NonPositiveThreshold(f64),
    #[error("no positive exceedance carries weight at x = {x:?}")]
    LocalNoData { x: Vec<f64> },
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
}

/// Settings for [`erf_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ErfConfig {
    pub tau_n: f64,
    pub forest: ForestParams,
    pub lambda: f64,
    /// Shape the penalty shrinks toward; `None` uses the unconditional fit.
    pub xi_anchor: Option<f64>,
    /// Use one forest for both the intermediate quantiles and the weights.
    pub share_forests: bool,
    /// Leaf size of the intermediate forest when it differs from the weight
    /// forest's; ignored with `share_forests`.
    pub intermediate_min_node_size: Option<usize>,
    pub theta_box: ThetaBox,
}

impl Default for ErfConfig {
    fn default() -> Self {
        Self {
            tau_n: 0.8,
            forest: ForestParams::default(),
            lambda: 0.0,
            xi_anchor: None,
            share_forests: false,
            intermediate_min_node_size: None,
            theta_box: ThetaBox::default(),
        }
    }
}

/// Tail estimator used to extrapolate beyond the intermediate level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Forest-localized GPD fit.
    Erf,
    /// Forest Hill shape with Weissman extrapolation.
    Hill,
    /// Weighted mean log-ratio shape with Weissman extrapolation.
    ExpShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    pub x: Vec<f64>,
    pub tau: f64,
    pub q_intermediate: f64,
    pub theta: GpdParams,
    pub q_extreme: f64,
}

/// `k = round(n (1 - tau_n))`, at least 1.
pub fn tail_count(n: usize, tau_n: f64) -> usize {
    ((n as f64 * (1.0 - tau_n)).round() as usize).max(1)
}

/// Forest-localized GPD fitting against a fixed exceedance vector.
#[derive(Debug, Clone, Copy)]
pub struct LocalFitter<'a> {
    pub exceedances: &'a [f64],
    pub n_over_k: f64,
    pub lambda: f64,
    pub xi_anchor: f64,
    pub theta_box: ThetaBox,
}

impl LocalFitter<'_> {
    /// Penalized fit with `weights` aligned to the exceedances. The
    /// likelihood scale is `(n/k) sum w_i 1{Z_i > 0}`.
    pub fn fit(&self, weights: &[f64]) -> Result<GpdFit, GpdError> {
        let mut z = Vec::new();
        let mut w = Vec::new();
        for (&zi, &wi) in self.exceedances.iter().zip(weights) {
            if zi > 0.0 && wi > 0.0 {
                z.push(zi);
                w.push(wi);
            }
        }
        let mass: f64 = w.iter().sum();
        if z.is_empty() {
            return Err(GpdError::NoData);
        }
        let penalty = PenaltyConfig::new(self.lambda, self.xi_anchor, self.n_over_k * mass)?;
        penalized_fit(&ExceedanceSample::new(z, w)?, &penalty, &self.theta_box)
    }
}

/// Fitted model. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ErfModel {
    training: TrainingSet,
    tau_n: f64,
    intermediate_forest: Forest,
    weight_forest: Option<Forest>,
    intermediate_at_train: Vec<f64>,
    exceedances: Vec<f64>,
    lambda: f64,
    xi_anchor: f64,
    theta_box: ThetaBox,
    sorted: SortedResponse,
}

impl PartialEq for ErfModel {
    fn eq(&self, other: &Self) -> bool {
        self.training == other.training
            && self.tau_n.to_bits() == other.tau_n.to_bits()
            && self.intermediate_forest == other.intermediate_forest
            && self.weight_forest == other.weight_forest
            && self.intermediate_at_train == other.intermediate_at_train
            && self.exceedances == other.exceedances
            && self.lambda.to_bits() == other.lambda.to_bits()
            && self.xi_anchor.to_bits() == other.xi_anchor.to_bits()
            && self.theta_box == other.theta_box
    }
}

/// Quantile of the forest-weighted response at `x`.
pub fn forest_quantile(forest: &Forest, sorted: &SortedResponse, y: &[f64], x: &[f64], tau: f64) -> f64 {
    sorted.quantile(&forest.raw_weights(x), y, tau)
}

fn check_level(tau_n: f64) -> Result<(), ErfError> {
    if tau_n > 0.0 && tau_n < 1.0 {
        Ok(())
    } else {
        Err(ErfError::InvalidLevel(tau_n))
    }
}

/// Intermediate quantile forest with its in-sample thresholds.
#[derive(Debug, Clone)]
pub struct Intermediate {
    pub forest: Forest,
    pub thresholds: Vec<f64>,
}

/// Fits the intermediate quantile forest and evaluates `Q_{X_i}(tau_n)` at
/// every training row.
pub fn fit_intermediate(data: &TrainingSet, config: &ErfConfig) -> Result<Intermediate, ErfError> {
    check_level(config.tau_n)?;
    let mut params = ForestParams {
        seed: derive_seed(config.forest.seed, &[0]),
        ..config.forest.clone()
    };
    if let (false, Some(kappa)) = (config.share_forests, config.intermediate_min_node_size) {
        params.min_node_size = kappa;
    }
    let forest = fit_forest(data, &params)?;
    let sorted = SortedResponse::new(data.y());
    let thresholds = (0..data.n())
        .into_par_iter()
        .map(|i| forest_quantile(&forest, &sorted, data.y(), data.row(i), config.tau_n))
        .collect();
    Ok(Intermediate { forest, thresholds })
}

/// Fits the intermediate quantile forest, computes in-sample thresholds and
/// exceedances, and fits the weight forest. GPD parameters are fitted per
/// query point at prediction time.
pub fn erf_fit(data: &TrainingSet, config: &ErfConfig) -> Result<ErfModel, ErfError> {
    let intermediate = fit_intermediate(data, config)?;
    erf_fit_with(data, config, intermediate)
}

/// As [`erf_fit`] with a precomputed intermediate stage. With
/// `share_forests` the intermediate forest also supplies the weights.
pub fn erf_fit_with(data: &TrainingSet, config: &ErfConfig, intermediate: Intermediate) -> Result<ErfModel, ErfError> {
    check_level(config.tau_n)?;
    let Intermediate { forest: intermediate_forest, thresholds: intermediate_at_train } = intermediate;
    if intermediate_at_train.len() != data.n() || intermediate_forest.training_n() != data.n() {
        return Err(ErfError::Inconsistent("intermediate stage was fitted on other data".into()));
    }
    let weight_forest = if config.share_forests {
        None
    } else {
        let params = ForestParams {
            seed: derive_seed(config.forest.seed, &[1]),
            ..config.forest.clone()
        };
        Some(fit_forest(data, &params)?)
    };
    let exceedances = exceedances_of(data.y(), &intermediate_at_train);
    if !exceedances.iter().any(|&z| z > 0.0) {
        return Err(ErfError::NoExceedances);
    }
    let xi_anchor = match config.xi_anchor {
        Some(a) => a,
        None => match unconditional_fit(&exceedances, &config.theta_box) {
            Ok(fit) => fit.params.xi,
            Err(e) if config.lambda > 0.0 => return Err(e.into()),
            Err(_) => 0.0,
        },
    };
    Ok(ErfModel {
        training: data.clone(),
        tau_n: config.tau_n,
        intermediate_forest,
        weight_forest,
        intermediate_at_train,
        exceedances,
        lambda: config.lambda,
        xi_anchor,
        theta_box: config.theta_box,
        sorted: SortedResponse::new(data.y()),
    })
}

/// `(y_i - q_i)_+` elementwise.
pub fn exceedances_of(y: &[f64], thresholds: &[f64]) -> Vec<f64> {
    y.iter().zip(thresholds).map(|(&y, &q)| (y - q).max(0.0)).collect()
}

impl ErfModel {
    /// Reassembles a model from stored parts; the exceedances are recomputed
    /// from the stored thresholds.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        training: TrainingSet,
        tau_n: f64,
        intermediate_forest: Forest,
        weight_forest: Option<Forest>,
        intermediate_at_train: Vec<f64>,
        lambda: f64,
        xi_anchor: f64,
        theta_box: ThetaBox,
    ) -> Result<Self, ErfError> {
        check_level(tau_n)?;
        let n = training.n();
        let forests = std::iter::once(&intermediate_forest).chain(weight_forest.as_ref());
        for f in forests {
            if f.training_n() != n || f.p() != training.p() {
                return Err(ErfError::Inconsistent("forest does not match the training set".into()));
            }
        }
        if intermediate_at_train.len() != n {
            return Err(ErfError::Inconsistent("threshold vector length differs from n".into()));
        }
        PenaltyConfig::new(lambda, xi_anchor, 1.0)?;
        theta_box.validate()?;
        let exceedances = exceedances_of(training.y(), &intermediate_at_train);
        if !exceedances.iter().any(|&z| z > 0.0) {
            return Err(ErfError::NoExceedances);
        }
        let sorted = SortedResponse::new(training.y());
        Ok(Self {
            training,
            tau_n,
            intermediate_forest,
            weight_forest,
            intermediate_at_train,
            exceedances,
            lambda,
            xi_anchor,
            theta_box,
            sorted,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn tau_n(&self) -> f64 {
        self.tau_n
    }

    pub fn k(&self) -> usize {
        tail_count(self.training.n(), self.tau_n)
    }

    pub fn n_over_k(&self) -> f64 {
        self.training.n() as f64 / self.k() as f64
    }

    pub fn intermediate_forest(&self) -> &Forest {
        &self.intermediate_forest
    }

    pub fn weight_forest(&self) -> &Forest {
        self.weight_forest.as_ref().unwrap_or(&self.intermediate_forest)
    }

    pub fn shares_forests(&self) -> bool {
        self.weight_forest.is_none()
    }

    pub fn intermediate_at_train(&self) -> &[f64] {
        &self.intermediate_at_train
    }

    pub fn exceedances(&self) -> &[f64] {
        &self.exceedances
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn xi_anchor(&self) -> f64 {
        self.xi_anchor
    }

    pub fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    fn check_x(&self, x: &[f64]) -> Result<(), ErfError> {
        if x.len() != self.training.p() {
            return Err(ForestError::DimensionMismatch {
                expected: self.training.p(),
                got: x.len(),
            }
            .into());
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite.into());
        }
        Ok(())
    }

    /// Weight-forest similarity weights at `x`.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>, ErfError> {
        self.check_x(x)?;
        Ok(self.weight_forest().raw_weights(x))
    }

    /// Intermediate quantile `Q_x(tau_n)`.
    pub fn intermediate_quantile(&self, x: &[f64]) -> Result<f64, ErfError> {
        self.quantile_at(x, self.tau_n)
    }

    /// Forest-weighted empirical quantile at any level.
    pub fn quantile_at(&self, x: &[f64], tau: f64) -> Result<f64, ErfError> {
        self.check_x(x)?;
        check_tau(tau)?;
        Ok(forest_quantile(&self.intermediate_forest, &self.sorted, self.training.y(), x, tau))
    }

    pub fn local_fitter(&self) -> LocalFitter<'_> {
        LocalFitter {
            exceedances: &self.exceedances,
            n_over_k: self.n_over_k(),
            lambda: self.lambda,
            xi_anchor: self.xi_anchor,
            theta_box: self.theta_box,
        }
    }

    /// Localized (penalized) GPD fit at `x`, with its solver path.
    pub fn predict_gpd_fit(&self, x: &[f64]) -> Result<GpdFit, ErfError> {
        let w = self.weights(x)?;
        self.local_fitter().fit(&w).map_err(|e| match e {
            GpdError::NoData => ErfError::LocalNoData { x: x.to_vec() },
            e => e.into(),
        })
    }

    pub fn predict_gpd_params(&self, x: &[f64]) -> Result<GpdParams, ErfError> {
        Ok(self.predict_gpd_fit(x)?.params)
    }

    /// Forest Hill estimate of the shape at `x`.
    pub fn hill_estimate(&self, x: &[f64]) -> Result<f64, ErfError> {
        let q = self.intermediate_quantile(x)?;
        let w = self.weights(x)?;
        hill_from_weights(&w, &self.exceedances, q, self.n_over_k())
    }

    /// Weighted mean of `log(Y_i / Q_{X_i})` over positive exceedances.
    pub fn exp_shape_estimate(&self, x: &[f64]) -> Result<f64, ErfError> {
        let w = self.weights(x)?;
        exp_shape_from_weights(&w, self.training.y(), &self.intermediate_at_train, &self.exceedances)
            .map_err(|e| match e {
                ErfError::Gpd(GpdError::NoData) => ErfError::LocalNoData { x: x.to_vec() },
                e => e,
            })
    }

    /// Extreme quantile at `x` for one level.
    pub fn predict_extreme_quantile(&self, x: &[f64], tau: f64) -> Result<QuantilePrediction, ErfError> {
        Ok(self.predict_quantiles(x, &[tau], Estimator::Erf)?.remove(0))
    }

    /// Extreme quantiles at `x` for several levels, sharing one tail fit.
    /// For the Weissman routes the reported scale is `xi * Q_x(tau_n)`.
    pub fn predict_quantiles(
        &self,
        x: &[f64],
        taus: &[f64],
        estimator: Estimator,
    ) -> Result<Vec<QuantilePrediction>, ErfError> {
        for &tau in taus {
            if !(tau > self.tau_n && tau < 1.0) {
                return Err(ErfError::LevelNotExtreme { tau, tau_n: self.tau_n });
            }
        }
        let q = self.intermediate_quantile(x)?;
        let theta = match estimator {
            Estimator::Erf => self.predict_gpd_params(x)?,
            Estimator::Hill => weissman_params(q, self.hill_estimate(x)?)?,
            Estimator::ExpShape => weissman_params(q, self.exp_shape_estimate(x)?)?,
        };
        taus.iter()
            .map(|&tau| {
                let q_extreme = match estimator {
                    Estimator::Erf => gpd_extrapolate(q, &theta, self.tau_n, tau)?,
                    _ => weissman_quantile(q, theta.xi, self.tau_n, tau)?,
                };
                Ok(QuantilePrediction {
                    x: x.to_vec(),
                    tau,
                    q_intermediate: q,
                    theta,
                    q_extreme,
                })
            })
            .collect()
    }
}

fn weissman_params(q: f64, xi: f64) -> Result<GpdParams, ErfError> {
    if !(q > 0.0) {
        return Err(ErfError::NonPositiveThreshold(q));
    }
    // Degenerate zero shape still needs a positive scale to be reported.
    let sigma = (xi * q).max(f64::MIN_POSITIVE);
    Ok(GpdParams::new(sigma, xi)?)
}
