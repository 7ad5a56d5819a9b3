//! Generative models with exact conditional quantiles, test grids, and
//! evaluation metrics for the simulation studies.

mod experiment;
mod halton;
mod metrics;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::data::TrainingSet;
use crate::gpd::GpdParams;
use crate::rng::seeded_rng;

pub use experiment::{run_experiment, EvalReport, ExperimentConfig, IseRecord, Method, MethodSummary, Selection, WangRecord};
pub use halton::{halton_grid, radical_inverse};
pub use metrics::{ise, mise_bias_variance, wang_loss, MiseDecomposition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown family `{0}`; valid families: {families}", families = Family::NAMES.join(", "))]
    UnknownFamily(String),
    #[error("family {family} needs p >= {min_p}, got {p}")]
    TooFewPredictors { family: Family, min_p: usize, p: usize },
    #[error("sample size must be at least 2, got {0}")]
    TooFewRows(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} repetitions, got {got}")]
    TooFewRepetitions { needed: usize, got: usize },
    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
}

/// Response distribution of the sensitivity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Noise {
    Student,
    Pareto,
}

/// Scale and shape surfaces of the sensitivity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    /// `s = 1`, `xi = 1 / (4 + 8 * 1{x2 > 0})`.
    ShapeStep,
    /// `s = 1 + 1{x1 > 0}`, `xi = 1/4`.
    ScaleStep,
    /// `s = 4 - (x1^2 + 2 x2^2)`, `xi = 1 / (6 + 3 tanh(-2 x1))`.
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Student t with 4 degrees of freedom and scale `1 + 1{x1 > 0}`.
    Example1,
    /// Scale `1 + 1{x1 > 0}` on Gaussian noise (shape 0) or Student t with
    /// `1 / shape` degrees of freedom.
    Experiment2 { shape: f64 },
    /// Student t with `nu = 3 (2 + tanh(-2 x1))` and one of three scales.
    Experiment3 { model: u8 },
    Sensitivity { noise: Noise, surface: Surface },
    /// Scale `1 + 1{x1 > 0}` on an exact GPD(1, `xi`) response.
    GpdStep { xi: f64 },
}

/// Location-free description of `Y | X = x`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Conditional {
    Gaussian { scale: f64 },
    Student { scale: f64, nu: f64 },
    Pareto { scale: f64, xi: f64 },
    Gpd { scale: f64, xi: f64 },
}

fn step(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1 + 2 pi phi(2 x1, 2 x2)` with `phi` the standard bivariate normal
/// density with correlation 0.75.
fn bump_scale(x1: f64, x2: f64) -> f64 {
    let rho: f64 = 0.75;
    let (a, b) = (2.0 * x1, 2.0 * x2);
    let det = 1.0 - rho * rho;
    1.0 + (-(a * a - 2.0 * rho * a * b + b * b) / (2.0 * det)).exp() / det.sqrt()
}

impl Family {
    pub const NAMES: [&'static str; 14] = [
        "example1",
        "exp2-gauss",
        "exp2-t4",
        "exp2-t3",
        "exp3-model1",
        "exp3-model2",
        "exp3-model3",
        "sens-student-shape-step",
        "sens-student-scale-step",
        "sens-student-complex",
        "sens-pareto-shape-step",
        "sens-pareto-scale-step",
        "sens-pareto-complex",
        "gpd-step",
    ];

    pub fn min_p(&self) -> usize {
        match self {
            Family::Experiment3 { .. } => 2,
            Family::Sensitivity { surface, .. } if *surface != Surface::ScaleStep => 2,
            _ => 1,
        }
    }

    fn conditional(&self, x: &[f64]) -> Conditional {
        let scale_step = 1.0 + step(x[0]);
        match *self {
            Family::Example1 => Conditional::Student { scale: scale_step, nu: 4.0 },
            Family::Experiment2 { shape } if shape == 0.0 => Conditional::Gaussian { scale: scale_step },
            Family::Experiment2 { shape } => Conditional::Student { scale: scale_step, nu: 1.0 / shape },
            Family::Experiment3 { model } => {
                let nu = 3.0 * (2.0 + (-2.0 * x[0]).tanh());
                let scale = match model {
                    1 => (2.0 + (2.0 * x[0]).tanh()) * (1.0 + x[1] / 2.0),
                    2 => 4.0 - (x[0] * x[0] + 2.0 * x[1] * x[1]),
                    _ => bump_scale(x[0], x[1]),
                };
                Conditional::Student { scale, nu }
            }
            Family::Sensitivity { noise, surface } => {
                let (scale, xi) = match surface {
                    Surface::ShapeStep => (1.0, 1.0 / (4.0 + 8.0 * step(x[1]))),
                    Surface::ScaleStep => (scale_step, 0.25),
                    Surface::Complex => (4.0 - (x[0] * x[0] + 2.0 * x[1] * x[1]), 1.0 / (6.0 + 3.0 * (-2.0 * x[0]).tanh())),
                };
                match noise {
                    Noise::Student => Conditional::Student { scale, nu: 1.0 / xi },
                    Noise::Pareto => Conditional::Pareto { scale, xi },
                }
            }
            Family::GpdStep { xi } => Conditional::Gpd { scale: scale_step, xi },
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let surface = |s: &Surface| match s {
            Surface::ShapeStep => "shape-step",
            Surface::ScaleStep => "scale-step",
            Surface::Complex => "complex",
        };
        match self {
            Family::Example1 => write!(f, "example1"),
            Family::Experiment2 { shape } if *shape == 0.0 => write!(f, "exp2-gauss"),
            Family::Experiment2 { shape } => write!(f, "exp2-t{}", (1.0 / shape).round()),
            Family::Experiment3 { model } => write!(f, "exp3-model{model}"),
            Family::Sensitivity { noise: Noise::Student, surface: s } => write!(f, "sens-student-{}", surface(s)),
            Family::Sensitivity { noise: Noise::Pareto, surface: s } => write!(f, "sens-pareto-{}", surface(s)),
            Family::GpdStep { .. } => write!(f, "gpd-step"),
        }
    }
}

impl FromStr for Family {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let surface = |name: &str| match name {
            "shape-step" => Some(Surface::ShapeStep),
            "scale-step" => Some(Surface::ScaleStep),
            "complex" => Some(Surface::Complex),
            _ => None,
        };
        let family = match s {
            "example1" => Some(Family::Example1),
            "exp2-gauss" => Some(Family::Experiment2 { shape: 0.0 }),
            "exp2-t4" => Some(Family::Experiment2 { shape: 0.25 }),
            "exp2-t3" => Some(Family::Experiment2 { shape: 1.0 / 3.0 }),
            "exp3-model1" => Some(Family::Experiment3 { model: 1 }),
            "exp3-model2" => Some(Family::Experiment3 { model: 2 }),
            "exp3-model3" => Some(Family::Experiment3 { model: 3 }),
            "gpd-step" => Some(Family::GpdStep { xi: 0.25 }),
            _ => s
                .strip_prefix("sens-student-")
                .and_then(surface)
                .map(|surface| Family::Sensitivity { noise: Noise::Student, surface })
                .or_else(|| {
                    s.strip_prefix("sens-pareto-")
                        .and_then(surface)
                        .map(|surface| Family::Sensitivity { noise: Noise::Pareto, surface })
                }),
        };
        family.ok_or_else(|| SimError::UnknownFamily(s.to_string()))
    }
}

/// A generative model with its sample size, dimension, and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(family: Family, n: usize, p: usize, seed: u64) -> Result<Self, SimError> {
        let spec = Self { family, n, p, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::TooFewRows(self.n));
        }
        if self.p < self.family.min_p() {
            return Err(SimError::TooFewPredictors { family: self.family, min_p: self.family.min_p(), p: self.p });
        }
        Ok(())
    }
}

fn sample_conditional<R: Rng>(c: Conditional, rng: &mut R) -> f64 {
    match c {
        Conditional::Gaussian { scale } => scale * rng.sample::<f64, _>(StandardNormal),
        Conditional::Student { scale, nu } => {
            let z: f64 = rng.sample(StandardNormal);
            let v = ChiSquared::new(nu).expect("positive degrees of freedom").sample(rng);
            scale * z / (v / nu).sqrt()
        }
        Conditional::Pareto { scale, xi } => {
            let u: f64 = 1.0 - rng.random::<f64>();
            scale * u.powf(-xi)
        }
        Conditional::Gpd { scale, xi } => {
            let u: f64 = 1.0 - rng.random::<f64>();
            scale * (-xi * u.ln()).exp_m1() / xi
        }
    }
}

/// Draws `X ~ U[-1, 1]^p` and `Y | X` from the family.
pub fn generate(spec: &SimSpec) -> Result<TrainingSet, SimError> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut x = Vec::with_capacity(spec.n * spec.p);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let start = x.len();
        x.extend((0..spec.p).map(|_| rng.random_range(-1.0..1.0)));
        y.push(sample_conditional(spec.family.conditional(&x[start..]), &mut rng));
    }
    Ok(TrainingSet::from_flat(x, spec.p, y).expect("generated data is finite"))
}

/// Responses drawn at fixed predictor rows (flat, row-major).
pub fn sample_responses(spec: &SimSpec, x: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    x.chunks(spec.p).map(|row| sample_conditional(spec.family.conditional(row), &mut rng)).collect()
}

/// Student t distribution function through the regularized incomplete beta.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student t quantile by bisection on the incomplete-beta argument.
pub fn student_t_quantile(tau: f64, nu: f64) -> f64 {
    if tau == 0.5 {
        return 0.0;
    }
    let tail = if tau > 0.5 { 1.0 - tau } else { tau };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if 0.5 * beta_reg(nu / 2.0, 0.5, mid) < tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    let t = (nu * (1.0 - v) / v).sqrt();
    if tau > 0.5 {
        t
    } else {
        -t
    }
}

fn check_probability(tau: f64) -> Result<(), SimError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(SimError::InvalidProbability(tau))
    }
}

/// Exact conditional quantile `Q_x(tau)`.
pub fn true_quantile(spec: &SimSpec, x: &[f64], tau: f64) -> Result<f64, SimError> {
    check_probability(tau)?;
    if x.len() != spec.p {
        return Err(SimError::LengthMismatch(x.len(), spec.p));
    }
    Ok(match spec.family.conditional(x) {
        Conditional::Gaussian { scale } => scale * Normal::standard().inverse_cdf(tau),
        Conditional::Student { scale, nu } => scale * student_t_quantile(tau, nu),
        Conditional::Pareto { scale, xi } => scale * (1.0 - tau).powf(-xi),
        Conditional::Gpd { scale, xi } => scale * (-xi * (1.0 - tau).ln()).exp_m1() / xi,
    })
}

/// Exact GPD law of `Y - Q_x(tau_n)` given exceedance, for families whose
/// tail is exactly generalized Pareto.
pub fn true_tail(spec: &SimSpec, x: &[f64], tau_n: f64) -> Result<Option<GpdParams>, SimError> {
    let q = true_quantile(spec, x, tau_n)?;
    Ok(match spec.family.conditional(x) {
        Conditional::Pareto { xi, .. } => Some(GpdParams { sigma: xi * q, xi }),
        Conditional::Gpd { scale, xi } => Some(GpdParams { sigma: scale + xi * q, xi }),
        _ => None,
    })
}
