use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use erf_core::archive::ModelArchive;
use erf_core::erf::{erf_fit, ErfConfig, Estimator};
use erf_core::forest::ForestParams;
use erf_core::rng::derive_seed;
use erf_core::sim::{generate, ise, true_quantile, wang_loss, SimSpec};
use erf_core::{tune, CvPlan, TrainingSet};

use crate::table::{emit, read_table, to_csv, write_atomic, Table};
use crate::{usage, EstimatorArg, EvalArgs, FitArgs, PredictArgs, SimulateArgs};

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = match SimSpec::new(a.family, a.n, a.p, a.seed) {
        Ok(s) => s,
        Err(e) => return usage(e.to_string()),
    };
    let data = generate(&spec)?;
    let mut header: Vec<String> = (1..=a.p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| data.row(i).iter().chain([&data.y()[i]]).map(|v| v.to_string()).collect())
        .collect();
    write_atomic(&a.out, &to_csv(&header, &rows)?)
}

fn response_column(table: &Table, name: Option<&str>) -> Result<usize> {
    match name {
        Some(n) => match table.column(n) {
            Some(c) => Ok(c),
            None => usage(format!("response column `{n}` not found; columns are {}", table.header.join(", "))),
        },
        None => Ok(table.header.len() - 1),
    }
}

fn check_forest(params: &ForestParams, n: usize, p: usize) -> Result<()> {
    match params.validate(n, p) {
        Ok(()) => Ok(()),
        Err(e) => usage(e.to_string()),
    }
}

pub fn fit(a: &FitArgs) -> Result<()> {
    if !(a.tau_n > 0.0 && a.tau_n < 1.0) {
        return usage(format!("--tau-n must lie in (0, 1), got {}", a.tau_n));
    }
    if !(a.lambda >= 0.0) {
        return usage("--lambda must be non-negative");
    }
    let table = read_table(&a.data)?;
    if table.header.len() < 2 {
        bail!("{} needs at least one predictor column and a response", a.data.display());
    }
    let y_col = response_column(&table, a.response.as_deref())?;
    let x_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != y_col).collect();
    let data = TrainingSet::from_flat(table.flat(&x_cols), x_cols.len(), table.values(y_col))
        .with_context(|| format!("in {}", a.data.display()))?;

    let forest = ForestParams::default().with_trees(a.trees).with_min_node_size(a.kappa).with_seed(a.seed);
    let config = ErfConfig {
        tau_n: a.tau_n,
        forest,
        lambda: a.lambda,
        share_forests: a.share_forests,
        intermediate_min_node_size: a.intermediate_kappa,
        ..ErfConfig::default()
    };
    check_forest(&config.forest, data.n(), data.p())?;
    if let Some(k) = a.intermediate_kappa {
        check_forest(&config.forest.clone().with_min_node_size(k), data.n(), data.p())?;
    }

    let model = if a.kappa_grid.is_some() || a.lambda_grid.is_some() {
        let plan = CvPlan {
            num_folds: a.folds,
            repeats: a.repeats,
            kappa_grid: a.kappa_grid.clone().unwrap_or_else(|| vec![a.kappa]),
            lambda_grid: a.lambda_grid.clone().unwrap_or_else(|| vec![a.lambda]),
            fold_forest_trees: a.fold_trees,
            seed: derive_seed(a.seed, &[2]),
        };
        if let Err(e) = plan.validate(data.n()) {
            return usage(e.to_string());
        }
        for &k in &plan.kappa_grid {
            check_forest(&config.forest.clone().with_min_node_size(k), data.n(), data.p())?;
        }
        let (model, result) = tune(&data, &config, &plan)?;
        for (kappa, lambda, score) in &result.mean_scores {
            eprintln!("cv kappa={kappa} lambda={lambda} score={score}");
        }
        if !result.empty_folds.is_empty() {
            eprintln!("warning: {} folds had no positive exceedance", result.empty_folds.len());
        }
        println!("selected kappa={} lambda={}", result.best.0, result.best.1);
        model
    } else {
        erf_fit(&data, &config)?
    };
    write_atomic(&a.out, &ModelArchive { seed: a.seed, model }.to_bytes())?;
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelArchive> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot open {}", path.display()))?;
    ModelArchive::from_bytes(&bytes).with_context(|| format!("cannot load model {}", path.display()))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let archive = load_model(&a.model)?;
    let model = &archive.model;
    let tau_n = model.tau_n();
    if let Some(&t) = a.tau.iter().find(|&&t| !(t > tau_n && t < 1.0)) {
        return usage(format!(
            "--tau {t} must lie in ({tau_n}, 1): levels at or below the model's intermediate level are not \
             extrapolated; refit with a smaller --tau-n"
        ));
    }
    let table = read_table(&a.test)?;
    let p = model.training().p();
    let skip = match &a.response {
        Some(name) => Some(response_column(&table, Some(name))?),
        // a trailing `y`, as written by `simulate`
        None if table.header.len() == p + 1 && table.header.last().is_some_and(|h| h == "y") => Some(p),
        None => None,
    };
    let x_cols: Vec<usize> = (0..table.header.len()).filter(|&c| Some(c) != skip).collect();
    if x_cols.len() != p {
        bail!(
            "{} has {} predictor columns but the model was fitted with p = {p} (use --response to drop a column)",
            a.test.display(),
            x_cols.len()
        );
    }
    let estimator = match a.estimator {
        EstimatorArg::Erf => Estimator::Erf,
        EstimatorArg::Hill => Estimator::Hill,
        EstimatorArg::Expshape => Estimator::ExpShape,
    };
    let predictions = table
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let x: Vec<f64> = x_cols.iter().map(|&c| row[c]).collect();
            model.predict_quantiles(&x, &a.tau, estimator).with_context(|| format!("test row {}", i + 1))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut header: Vec<String> = x_cols.iter().map(|&c| table.header[c].clone()).collect();
    header.extend(["tau", "q_intermediate", "sigma_hat", "xi_hat", "q_extreme"].map(String::from));
    let rows: Vec<Vec<String>> = predictions
        .iter()
        .flatten()
        .map(|q| {
            q.x.iter()
                .chain([&q.tau, &q.q_intermediate, &q.theta.sigma, &q.theta.xi, &q.q_extreme])
                .map(|v| v.to_string())
                .collect()
        })
        .collect();
    emit(a.out.as_deref(), &to_csv(&header, &rows)?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.test.is_none() && a.family.is_none() {
        return usage("give --test (calibration) and/or --family (error against true quantiles)");
    }
    let preds = read_table(&a.predictions)?;
    let (Some(tau_col), Some(q_col)) = (preds.column("tau"), preds.column("q_extreme")) else {
        bail!("{} lacks `tau` and `q_extreme` columns", a.predictions.display());
    };
    let x_cols: Vec<usize> = (0..tau_col).collect();
    let mut taus: Vec<f64> = Vec::new();
    for r in &preds.rows {
        if !taus.contains(&r[tau_col]) {
            taus.push(r[tau_col]);
        }
    }
    let responses = match &a.test {
        Some(path) => {
            let test = read_table(path)?;
            let c = response_column(&test, a.response.as_deref())?;
            Some(test.values(c))
        }
        None => None,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for &tau in &taus {
        let group: Vec<&Vec<f64>> = preds.rows.iter().filter(|r| r[tau_col] == tau).collect();
        let q: Vec<f64> = group.iter().map(|r| r[q_col]).collect();
        if let Some(y) = &responses {
            if y.len() != q.len() {
                return usage(format!(
                    "{} predictions at tau = {tau} but {} test responses",
                    q.len(),
                    y.len()
                ));
            }
            let loss = wang_loss(&q, y, tau)?;
            rows.push(vec![tau.to_string(), "wang".into(), loss.to_string()]);
        }
        if let Some(family) = a.family {
            let spec = match SimSpec::new(family, 2, x_cols.len(), 0) {
                Ok(s) => s,
                Err(e) => return usage(e.to_string()),
            };
            let truth: Vec<f64> = group
                .iter()
                .map(|r| true_quantile(&spec, &r[..x_cols.len()], tau))
                .collect::<Result<_, _>>()?;
            rows.push(vec![tau.to_string(), "ise".into(), ise(&q, &truth)?.to_string()]);
        }
    }
    let header = ["tau", "metric", "value"].map(String::from);
    emit(a.out.as_deref(), &to_csv(&header, &rows)?)
}
