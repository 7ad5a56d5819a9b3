//! Repeated K-fold cross-validation of the weight-forest leaf size and the
//! shape penalty, scored by out-of-fold GPD deviance.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::TrainingSet;
use crate::erf::{erf_fit_with, exceedances_of, fit_intermediate, tail_count, ErfConfig, ErfError, ErfModel, LocalFitter};
use crate::forest::{fit_forest, ForestError, ForestParams};
use crate::gpd::{unconditional_fit, GpdError};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvError {
    #[error(transparent)]
    Erf(#[from] ErfError),
    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),
    #[error("{folds} folds requested for {n} rows")]
    TooManyFolds { folds: usize, n: usize },
}

impl From<ForestError> for CvError {
    fn from(e: ForestError) -> Self {
        CvError::Erf(e.into())
    }
}

impl From<GpdError> for CvError {
    fn from(e: GpdError) -> Self {
        CvError::Erf(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub num_folds: usize,
    pub repeats: usize,
    pub kappa_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub fold_forest_trees: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            num_folds: 5,
            repeats: 3,
            kappa_grid: vec![10, 40, 100],
            lambda_grid: vec![0.0, 0.001, 0.01],
            fold_forest_trees: 50,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self, n: usize) -> Result<(), CvError> {
        let bad = |m: &str| Err(CvError::InvalidPlan(m.into()));
        if self.num_folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.num_folds > n {
            return Err(CvError::TooManyFolds { folds: self.num_folds, n });
        }
        if self.repeats == 0 {
            return bad("need at least one repeat");
        }
        if self.kappa_grid.is_empty() || self.kappa_grid.contains(&0) {
            return bad("kappa grid must be non-empty and positive");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda grid must be non-empty and non-negative");
        }
        if self.fold_forest_trees == 0 {
            return bad("fold forests need at least one tree");
        }
        Ok(())
    }
}

/// Out-of-fold deviance summed over held-out positive exceedances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvScore {
    pub kappa: usize,
    pub lambda: f64,
    pub repeat: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub scores: Vec<CvScore>,
    /// `(kappa, lambda, mean score over repeats)` in grid order.
    pub mean_scores: Vec<(usize, f64, f64)>,
    pub best: (usize, f64),
    /// `(repeat, fold)` pairs whose held-out rows had no positive exceedance.
    pub empty_folds: Vec<(usize, usize)>,
    /// Held-out fits that fell back to the fold's unconditional fit.
    pub fallbacks: usize,
}

/// For each repeat, a seeded permutation of `0..n` cut into `folds` parts
/// whose sizes differ by at most one (larger parts first).
pub fn make_folds(n: usize, folds: usize, repeats: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>, CvError> {
    if folds == 0 || folds > n {
        return Err(CvError::TooManyFolds { folds, n });
    }
    Ok((0..repeats)
        .map(|r| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seeded_rng(derive_seed(seed, &[r as u64])));
            let (base, extra) = (n / folds, n % folds);
            let mut out = Vec::with_capacity(folds);
            let mut start = 0;
            for f in 0..folds {
                let len = base + usize::from(f < extra);
                out.push(perm[start..start + len].to_vec());
                start += len;
            }
            out
        })
        .collect())
}

/// Rows of `0..n` not in `held_out`, ascending.
fn training_rows(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut in_fold = vec![false; n];
    held_out.iter().for_each(|&i| in_fold[i] = true);
    (0..n).filter(|&i| !in_fold[i]).collect()
}

struct FoldOutcome {
    /// Per (kappa, lambda) grid index, deviances of held-out positives in
    /// held-out order.
    deviances: Vec<Vec<f64>>,
    empty: bool,
    fallbacks: usize,
}

fn score_fold(
    data: &TrainingSet,
    exceedances: &[f64],
    held_out: &[usize],
    config: &ErfConfig,
    plan: &CvPlan,
    seed: u64,
) -> Result<FoldOutcome, CvError> {
    let train_rows = training_rows(data.n(), held_out);
    let train = data.subset(&train_rows).map_err(ForestError::from)?;
    let z_train: Vec<f64> = train_rows.iter().map(|&i| exceedances[i]).collect();
    let targets: Vec<usize> = held_out.iter().copied().filter(|&i| exceedances[i] > 0.0).collect();
    let grid = plan.kappa_grid.len() * plan.lambda_grid.len();
    if targets.is_empty() {
        return Ok(FoldOutcome { deviances: vec![Vec::new(); grid], empty: true, fallbacks: 0 });
    }
    let fold_unconditional = unconditional_fit(&z_train, &config.theta_box)?;
    let anchor = config.xi_anchor.unwrap_or(fold_unconditional.params.xi);
    let n_over_k = train.n() as f64 / tail_count(train.n(), config.tau_n) as f64;

    let mut deviances = Vec::with_capacity(grid);
    let mut fallbacks = 0;
    for &kappa in &plan.kappa_grid {
        let params = ForestParams {
            num_trees: plan.fold_forest_trees,
            min_node_size: kappa,
            seed,
            ..config.forest.clone()
        };
        let forest = fit_forest(&train, &params)?;
        let weights: Vec<Vec<f64>> = targets.par_iter().map(|&i| forest.raw_weights(data.row(i))).collect();
        for &lambda in &plan.lambda_grid {
            let fitter = LocalFitter {
                exceedances: &z_train,
                n_over_k,
                lambda,
                xi_anchor: anchor,
                theta_box: config.theta_box,
            };
            let scored: Vec<(f64, bool)> = targets
                .par_iter()
                .zip(&weights)
                .map(|(&i, w)| {
                    let (theta, fell_back) = match fitter.fit(w) {
                        Ok(fit) => (fit.params, false),
                        Err(_) => (fold_unconditional.params, true),
                    };
                    (crate::gpd::gpd_deviance(exceedances[i], &theta).unwrap_or(f64::INFINITY), fell_back)
                })
                .collect();
            fallbacks += scored.iter().filter(|s| s.1).count();
            deviances.push(scored.into_iter().map(|s| s.0).collect());
        }
    }
    Ok(FoldOutcome { deviances, empty: false, fallbacks })
}

/// Repeated K-fold scores over the `(kappa, lambda)` grid. The intermediate
/// quantiles are fitted once on all rows; each fold grows one weight forest
/// per `kappa` on its training rows with a seed that depends only on
/// `(repeat, fold)`.
pub fn cv_score(data: &TrainingSet, config: &ErfConfig, plan: &CvPlan) -> Result<CvResult, CvError> {
    let intermediate = fit_intermediate(data, config)?;
    let exceedances = exceedances_of(data.y(), &intermediate.thresholds);
    cv_score_with(data, config, plan, &exceedances)
}

fn cv_score_with(data: &TrainingSet, config: &ErfConfig, plan: &CvPlan, exceedances: &[f64]) -> Result<CvResult, CvError> {
    plan.validate(data.n())?;
    let folds = make_folds(data.n(), plan.num_folds, plan.repeats, plan.seed)?;
    let grid: Vec<(usize, f64)> =
        plan.kappa_grid.iter().flat_map(|&k| plan.lambda_grid.iter().map(move |&l| (k, l))).collect();

    let mut scores = Vec::new();
    let mut empty_folds = Vec::new();
    let mut fallbacks = 0;
    for (r, partition) in folds.iter().enumerate() {
        let mut totals = vec![0.0; grid.len()];
        for (f, held_out) in partition.iter().enumerate() {
            let seed = derive_seed(plan.seed, &[1 + r as u64, f as u64]);
            let out = score_fold(data, exceedances, held_out, config, plan, seed)?;
            if out.empty {
                empty_folds.push((r, f));
            }
            fallbacks += out.fallbacks;
            for (t, devs) in totals.iter_mut().zip(&out.deviances) {
                *t += devs.iter().sum::<f64>();
            }
        }
        for (&(kappa, lambda), &score) in grid.iter().zip(&totals) {
            scores.push(CvScore { kappa, lambda, repeat: r, score });
        }
    }

    let mean_scores: Vec<(usize, f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, &(k, l))| {
            let total: f64 = scores.iter().skip(g).step_by(grid.len()).map(|s| s.score).sum();
            (k, l, total / plan.repeats as f64)
        })
        .collect();
    let best = mean_scores
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.total_cmp(&b.1)))
        .map(|&(k, l, _)| (k, l))
        .expect("non-empty grid");
    Ok(CvResult { scores, mean_scores, best, empty_folds, fallbacks })
}

/// Cross-validates, then refits on all rows with the full-size forest at
/// the selected `(kappa, lambda)`.
pub fn tune(data: &TrainingSet, config: &ErfConfig, plan: &CvPlan) -> Result<(ErfModel, CvResult), CvError> {
    let intermediate = fit_intermediate(data, config)?;
    let exceedances = exceedances_of(data.y(), &intermediate.thresholds);
    let result = cv_score_with(data, config, plan, &exceedances)?;
    let (kappa, lambda) = result.best;
    let final_config = ErfConfig {
        forest: ForestParams { min_node_size: kappa, ..config.forest.clone() },
        intermediate_min_node_size: config.intermediate_min_node_size.or(Some(config.forest.min_node_size)),
        lambda,
        ..config.clone()
    };
    let model = if config.share_forests {
        crate::erf::erf_fit(data, &final_config)?
    } else {
        erf_fit_with(data, &final_config, intermediate)?
    };
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, Family, SimSpec};

    #[test]
    fn fold_sizes() {
        let f = make_folds(10, 5, 1, 0).unwrap();
        assert!(f[0].iter().all(|fold| fold.len() == 2));
        let f = make_folds(11, 5, 2, 0).unwrap();
        let sizes: Vec<usize> = f[0].iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 2, 2, 2, 2]);
        let mut all: Vec<usize> = f[1].concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(make_folds(11, 5, 2, 0).unwrap(), f);
        assert_ne!(make_folds(11, 5, 2, 1).unwrap(), f);
        assert!(make_folds(3, 5, 1, 0).is_err());
    }

    fn small_config() -> ErfConfig {
        ErfConfig {
            forest: ForestParams::default().with_trees(30).with_min_node_size(20),
            ..ErfConfig::default()
        }
    }

    #[test]
    fn single_point_grid_and_duplicates() {
        let data = generate(&SimSpec::new(Family::Example1, 400, 3, 2).unwrap()).unwrap();
        let plan = CvPlan {
            repeats: 1,
            num_folds: 3,
            kappa_grid: vec![20],
            lambda_grid: vec![0.01],
            fold_forest_trees: 10,
            seed: 4,
        };
        let result = cv_score(&data, &small_config(), &plan).unwrap();
        assert_eq!(result.best, (20, 0.01));
        let dup = CvPlan { kappa_grid: vec![20, 20], lambda_grid: vec![0.0, 0.0], ..plan.clone() };
        let r = cv_score(&data, &small_config(), &dup).unwrap();
        let s: Vec<f64> = r.scores.iter().map(|s| s.score).collect();
        assert!(s.iter().all(|v| *v == s[0]), "{s:?}");
        assert_eq!(r.best, (20, 0.0));
    }

    #[test]
    fn tune_records_what_it_fits() {
        let data = generate(&SimSpec::new(Family::Example1, 400, 3, 5).unwrap()).unwrap();
        let plan = CvPlan {
            repeats: 1,
            num_folds: 3,
            kappa_grid: vec![10, 40],
            lambda_grid: vec![0.0, 0.01],
            fold_forest_trees: 10,
            seed: 1,
        };
        let (model, result) = tune(&data, &small_config(), &plan).unwrap();
        assert_eq!(model.weight_forest().params().min_node_size, result.best.0);
        assert_eq!(model.lambda(), result.best.1);
        assert_eq!(model.intermediate_forest().params().min_node_size, 20);
        let (_, again) = tune(&data, &small_config(), &plan).unwrap();
        assert_eq!(again, result);
        assert_eq!(result.scores.len(), 4);
        // A local fit whose upper endpoint falls below a held-out exceedance
        // scores +inf.
        assert!(result.scores.iter().all(|s| !s.score.is_nan() && s.score != 0.0), "{:?}", result.scores);
        assert!(result.mean_scores.iter().any(|s| s.2.is_finite()));
    }

    #[test]
    fn training_rows_exclude_held_out() {
        for partition in make_folds(37, 5, 3, 9).unwrap() {
            for fold in &partition {
                let train = training_rows(37, fold);
                assert_eq!(train.len() + fold.len(), 37);
                assert!(fold.iter().all(|i| !train.contains(i)));
            }
        }
    }

    #[test]
    fn one_point_grid_tunes_to_direct_fit() {
        let data = generate(&SimSpec::new(Family::Example1, 300, 2, 8).unwrap()).unwrap();
        let config = ErfConfig { lambda: 0.001, ..small_config() };
        let plan = CvPlan {
            repeats: 1,
            num_folds: 3,
            kappa_grid: vec![20],
            lambda_grid: vec![0.001],
            fold_forest_trees: 5,
            seed: 0,
        };
        let (model, _) = tune(&data, &config, &plan).unwrap();
        assert_eq!(model, crate::erf::erf_fit(&data, &config).unwrap());
    }

    #[test]
    fn fold_totals_do_not_depend_on_order() {
        let data = generate(&SimSpec::new(Family::Example1, 300, 2, 8).unwrap()).unwrap();
        let intermediate = fit_intermediate(&data, &small_config()).unwrap();
        let z = exceedances_of(data.y(), &intermediate.thresholds);
        let plan = CvPlan { kappa_grid: vec![20], lambda_grid: vec![0.0], fold_forest_trees: 5, ..CvPlan::default() };
        let folds = make_folds(300, 5, 1, 0).unwrap().remove(0);
        let mut parts: Vec<f64> = folds
            .iter()
            .map(|f| score_fold(&data, &z, f, &small_config(), &plan, 1).unwrap().deviances[0].iter().sum())
            .collect();
        let forward: f64 = parts.iter().sum();
        parts.reverse();
        let backward: f64 = parts.iter().sum();
        assert!((forward - backward).abs() < 1e-9 * forward.abs().max(1.0));
    }

    #[test]
    fn plan_validation() {
        let p = CvPlan { kappa_grid: vec![], ..CvPlan::default() };
        assert!(p.validate(100).is_err());
        let p = CvPlan { lambda_grid: vec![-1.0], ..CvPlan::default() };
        assert!(p.validate(100).is_err());
        assert!(CvPlan::default().validate(100).is_ok());
    }
}
