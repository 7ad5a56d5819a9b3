//! Extremal random forests for extreme conditional quantile regression.
//!
//! A quantile forest supplies intermediate conditional quantiles; the
//! exceedances above them are fitted with a generalized Pareto likelihood
//! localized by forest similarity weights, and extrapolated to the target
//! level.

pub mod archive;
pub mod cv;
pub mod data;
pub mod erf;
pub mod forest;
pub mod gpd;
pub mod rng;
pub mod sim;

pub use cv::{cv_score, make_folds, tune, CvPlan, CvResult};
pub use data::TrainingSet;
pub use erf::{erf_fit, ErfConfig, ErfError, ErfModel, Estimator, QuantilePrediction};
pub use forest::{fit_forest, similarity_weights, Forest, ForestParams, WeightVector};
pub use gpd::{GpdParams, PenaltyConfig, ThetaBox};
pub use sim::{run_experiment, EvalReport, ExperimentConfig, Family, Method, SimSpec};
