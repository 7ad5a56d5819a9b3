use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use super::{generate, halton_grid, ise, mise_bias_variance, sample_responses, true_quantile, wang_loss, SimError, SimSpec};
use crate::cv::{tune, CvPlan};
use crate::erf::{erf_fit, gpd_extrapolate, ErfConfig, ErfModel, Estimator};
use crate::gpd::unconditional_fit;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Erf,
    HillWeissman,
    ExpShapeWeissman,
    /// Constant GPD parameters fitted to all exceedances.
    Unconditional,
    /// Forest-weighted empirical quantile at the target level.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Erf, Method::HillWeissman, Method::ExpShapeWeissman, Method::Unconditional, Method::Baseline];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Erf => "erf",
            Method::HillWeissman => "hill",
            Method::ExpShapeWeissman => "expshape",
            Method::Unconditional => "unconditional",
            Method::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Family, training size, dimension, and master seed.
    pub spec: SimSpec,
    pub repetitions: usize,
    pub test_points: usize,
    /// Target levels, each above `erf.tau_n`.
    pub taus: Vec<f64>,
    /// ERF settings; the forest seed is replaced per repetition.
    pub erf: ErfConfig,
    pub methods: Vec<Method>,
    /// Tune `(kappa, lambda)` by cross-validation in every repetition.
    pub cv: Option<CvPlan>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.spec.validate()?;
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.repetitions == 0 {
            return Err(SimError::TooFewRepetitions { needed: 1, got: 0 });
        }
        if self.test_points == 0 {
            return bad("need at least one test point".into());
        }
        if self.taus.is_empty() || self.methods.is_empty() {
            return bad("need at least one level and one method".into());
        }
        if let Some(&tau) = self.taus.iter().find(|&&t| !(t > self.erf.tau_n && t < 1.0)) {
            return bad(format!("level {tau} must lie in ({}, 1)", self.erf.tau_n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IseRecord {
    pub method: Method,
    pub tau: f64,
    pub repetition: usize,
    /// Infinite when the method failed in this repetition.
    pub ise: f64,
}

/// Calibration of predictions against fresh responses at the test points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WangRecord {
    pub method: Method,
    pub tau: f64,
    pub repetition: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub tau: f64,
    pub mise: f64,
    pub sqrt_mise: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub median_ise: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub repetition: usize,
    pub kappa: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<IseRecord>,
    pub wang: Vec<WangRecord>,
    pub summary: Vec<MethodSummary>,
    pub selected: Vec<Selection>,
}

impl EvalReport {
    pub fn summary_for(&self, method: Method, tau: f64) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method && s.tau == tau)
    }

    /// `(method, tau, repetition, metric, value)` rows.
    pub fn long_rows(&self) -> Vec<(Method, f64, usize, &'static str, f64)> {
        let mut rows: Vec<_> = self.records.iter().map(|r| (r.method, r.tau, r.repetition, "ise", r.ise)).collect();
        rows.extend(self.wang.iter().map(|r| (r.method, r.tau, r.repetition, "wang", r.loss)));
        rows
    }
}

struct Repetition {
    /// Per method and level, predictions at the test points (`None` on failure).
    estimates: Vec<Vec<Option<Vec<f64>>>>,
    selected: Option<Selection>,
}

fn predict_method(model: &ErfModel, method: Method, grid: &[f64], p: usize, taus: &[f64]) -> Option<Vec<Vec<f64>>> {
    let points: Vec<&[f64]> = grid.chunks(p).collect();
    let per_point: Option<Vec<Vec<f64>>> = match method {
        Method::Erf | Method::HillWeissman | Method::ExpShapeWeissman => {
            let estimator = match method {
                Method::Erf => Estimator::Erf,
                Method::HillWeissman => Estimator::Hill,
                _ => Estimator::ExpShape,
            };
            points
                .par_iter()
                .map(|x| {
                    model
                        .predict_quantiles(x, taus, estimator)
                        .ok()
                        .map(|preds| preds.into_iter().map(|q| q.q_extreme).collect())
                })
                .collect()
        }
        Method::Unconditional => {
            let theta = unconditional_fit(model.exceedances(), model.theta_box()).ok()?.params;
            points
                .par_iter()
                .map(|x| {
                    let q = model.intermediate_quantile(x).ok()?;
                    taus.iter().map(|&tau| gpd_extrapolate(q, &theta, model.tau_n(), tau).ok()).collect()
                })
                .collect()
        }
        Method::Baseline => points
            .par_iter()
            .map(|x| taus.iter().map(|&tau| model.quantile_at(x, tau).ok()).collect())
            .collect(),
    };
    // Transpose to per-level vectors.
    let per_point = per_point?;
    Some((0..taus.len()).map(|t| per_point.iter().map(|v| v[t]).collect()).collect())
}

fn run_repetition(config: &ExperimentConfig, grid: &[f64], rep: usize) -> Result<Repetition, SimError> {
    let master = config.spec.seed;
    let spec = SimSpec { seed: derive_seed(master, &[rep as u64, 0]), ..config.spec };
    let data = generate(&spec)?;
    let mut erf = config.erf.clone();
    erf.forest.seed = derive_seed(master, &[rep as u64, 1]);
    let (model, selected) = match &config.cv {
        Some(plan) => {
            let plan = CvPlan { seed: derive_seed(master, &[rep as u64, 3]), ..plan.clone() };
            match tune(&data, &erf, &plan) {
                Ok((model, result)) => {
                    let (kappa, lambda) = result.best;
                    (Some(model), Some(Selection { repetition: rep, kappa, lambda }))
                }
                Err(_) => (None, None),
            }
        }
        None => (erf_fit(&data, &erf).ok(), None),
    };
    let estimates = config
        .methods
        .iter()
        .map(|&m| {
            let preds = model.as_ref().and_then(|model| predict_method(model, m, grid, spec.p, &config.taus));
            match preds {
                Some(levels) => levels.into_iter().map(Some).collect(),
                None => vec![None; config.taus.len()],
            }
        })
        .collect();
    Ok(Repetition { estimates, selected })
}

/// Runs every repetition (in parallel, each from seeds derived from the
/// master seed and the repetition index), evaluates all methods on a Halton
/// grid, and aggregates per method and level.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, SimError> {
    config.validate()?;
    let p = config.spec.p;
    let grid = halton_grid(config.test_points, p);
    let truths: Vec<Vec<f64>> = config
        .taus
        .iter()
        .map(|&tau| grid.chunks(p).map(|x| true_quantile(&config.spec, x, tau)).collect())
        .collect::<Result<_, _>>()?;
    let reps: Vec<Repetition> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(config, &grid, rep))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut wang = Vec::new();
    let mut summary = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        for (ti, &tau) in config.taus.iter().enumerate() {
            let mut ok_estimates = Vec::new();
            let mut ises = Vec::with_capacity(reps.len());
            for (rep, r) in reps.iter().enumerate() {
                let value = match &r.estimates[mi][ti] {
                    Some(est) => {
                        let fresh = sample_responses(&config.spec, &grid, derive_seed(config.spec.seed, &[rep as u64, 2]));
                        wang.push(WangRecord { method, tau, repetition: rep, loss: wang_loss(est, &fresh, tau)? });
                        ok_estimates.push(est.clone());
                        ise(est, &truths[ti])?
                    }
                    None => f64::INFINITY,
                };
                ises.push(value);
                records.push(IseRecord { method, tau, repetition: rep, ise: value });
            }
            let failures = reps.len() - ok_estimates.len();
            let (mise, bias_sq, variance) = if failures > 0 {
                (f64::INFINITY, f64::NAN, f64::NAN)
            } else if ok_estimates.len() == 1 {
                (ises[0], ises[0], 0.0)
            } else {
                let d = mise_bias_variance(&ok_estimates, &truths[ti])?;
                (d.mise, d.bias_sq, d.variance)
            };
            ises.sort_by(f64::total_cmp);
            let mid = ises.len() / 2;
            let median_ise = if ises.len() % 2 == 1 { ises[mid] } else { 0.5 * (ises[mid - 1] + ises[mid]) };
            summary.push(MethodSummary {
                method,
                tau,
                mise,
                sqrt_mise: mise.sqrt(),
                bias_sq,
                variance,
                median_ise,
                failures,
            });
        }
    }
    let selected = reps.into_iter().filter_map(|r| r.selected).collect();
    Ok(EvalReport { records, wang, summary, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestParams;
    use crate::sim::Family;

    fn config(reps: usize, methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            spec: SimSpec::new(Family::Example1, 400, 2, 3).unwrap(),
            repetitions: reps,
            test_points: 20,
            taus: vec![0.9, 0.99],
            erf: ErfConfig {
                forest: ForestParams::default().with_trees(20).with_min_node_size(20),
                ..ErfConfig::default()
            },
            methods,
            cv: None,
        }
    }

    #[test]
    fn one_repetition_mise_is_the_ise() {
        let report = run_experiment(&config(1, vec![Method::Erf])).unwrap();
        assert_eq!(report.summary.len(), 2);
        for s in &report.summary {
            let r = report.records.iter().find(|r| r.tau == s.tau).unwrap();
            assert_eq!(s.mise, r.ise);
            assert!(s.mise.is_finite());
        }
    }

    #[test]
    fn decomposition_matches_mean_ise() {
        let report = run_experiment(&config(3, Method::ALL.to_vec())).unwrap();
        assert_eq!(report.summary.len(), 10);
        for s in &report.summary {
            let ises: Vec<f64> =
                report.records.iter().filter(|r| r.method == s.method && r.tau == s.tau).map(|r| r.ise).collect();
            let mean = ises.iter().sum::<f64>() / ises.len() as f64;
            assert!((s.mise - mean).abs() < 1e-9 * mean.max(1.0), "{s:?}");
            assert!((s.bias_sq + s.variance - s.mise).abs() < 1e-9 * s.mise.max(1.0));
        }
        assert_eq!(report.wang.len(), 30);
        assert_eq!(report.long_rows().len(), 60);
    }

    #[test]
    fn deterministic() {
        let c = config(2, vec![Method::Erf, Method::Baseline]);
        assert_eq!(run_experiment(&c).unwrap(), run_experiment(&c).unwrap());
    }

    #[test]
    fn rejects_low_levels() {
        let mut c = config(1, vec![Method::Erf]);
        c.taus = vec![0.5];
        assert!(run_experiment(&c).is_err());
        assert_eq!("hill".parse::<Method>().unwrap(), Method::HillWeissman);
        assert!("x".parse::<Method>().is_err());
    }
}
