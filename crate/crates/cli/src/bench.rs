//! Simulation studies behind `erf bench`.

use anyhow::{Context, Result};
use serde::Serialize;

use erf_core::erf::ErfConfig;
use erf_core::forest::ForestParams;
use erf_core::rng::derive_seed;
use erf_core::sim::{run_experiment, ExperimentConfig, Family, Method, MethodSummary, Selection, SimSpec};
use erf_core::CvPlan;

use crate::table::{to_csv, write_atomic};
use crate::{usage, BenchArgs, Experiment};

struct Setting {
    label: String,
    family: Family,
    n: usize,
    p: usize,
    tau_n: f64,
    taus: Vec<f64>,
    methods: Vec<Method>,
}

#[derive(Serialize)]
struct SettingSummary {
    setting: String,
    family: String,
    n: usize,
    p: usize,
    tau_n: f64,
    seed: u64,
    summary: Vec<MethodSummary>,
    selected: Vec<Selection>,
}

#[derive(Serialize)]
struct Scale {
    repetitions: usize,
    test_points: usize,
    trees: usize,
}

#[derive(Serialize)]
struct Summary {
    experiment: &'static str,
    seed: u64,
    cv: bool,
    scale: Scale,
    settings: Vec<SettingSummary>,
}

fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Exp1Quantiles => "exp1-quantiles",
        Experiment::Exp1Dims => "exp1-dims",
        Experiment::Exp2 => "exp2",
        Experiment::Exp3 => "exp3",
        Experiment::Sensitivity => "sensitivity",
    }
}

fn family(name: &str) -> Family {
    name.parse().expect("built-in family name")
}

fn settings(e: Experiment) -> Vec<Setting> {
    let all = Method::ALL.to_vec();
    let setting = |label: String, fam: &str, p: usize, taus: Vec<f64>| Setting {
        label,
        family: family(fam),
        n: 2000,
        p,
        tau_n: 0.8,
        taus,
        methods: all.clone(),
    };
    match e {
        Experiment::Exp1Quantiles => {
            vec![setting("example1-p10".into(), "example1", 10, vec![0.9, 0.99, 0.995, 0.999, 0.9995])]
        }
        Experiment::Exp1Dims => [5, 10, 20, 40]
            .into_iter()
            .map(|p| setting(format!("example1-p{p}"), "example1", p, vec![0.9995]))
            .collect(),
        Experiment::Exp2 => ["exp2-gauss", "exp2-t4", "exp2-t3"]
            .into_iter()
            .map(|f| setting(f.into(), f, 10, vec![0.9995]))
            .collect(),
        Experiment::Exp3 => ["exp3-model1", "exp3-model2", "exp3-model3"]
            .into_iter()
            .map(|f| setting(f.into(), f, 10, vec![0.9995]))
            .collect(),
        Experiment::Sensitivity => {
            let mut out = Vec::new();
            for f in &Family::NAMES[7..13] {
                for tau_n in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95] {
                    out.push(Setting {
                        label: format!("{f}-taun{tau_n}"),
                        family: family(f),
                        n: 1000,
                        p: 2,
                        tau_n,
                        taus: vec![0.9995],
                        methods: vec![Method::Erf, Method::HillWeissman, Method::ExpShapeWeissman],
                    });
                }
            }
            out
        }
    }
}

pub fn run(a: &BenchArgs) -> Result<()> {
    let (mut reps, mut points, mut trees) = if a.desk_scale { (10, 200, 500) } else { (50, 1000, 2000) };
    if a.experiment == Experiment::Sensitivity {
        points = 100;
    }
    reps = a.repetitions.unwrap_or(reps);
    points = a.test_points.unwrap_or(points);
    trees = a.trees.unwrap_or(trees);
    if reps == 0 || points == 0 || trees == 0 {
        return usage("--repetitions, --test-points and --trees must be positive");
    }
    let name = experiment_name(a.experiment);
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut summaries = Vec::new();
    for (i, s) in settings(a.experiment).into_iter().enumerate() {
        let n = a.n.unwrap_or(s.n);
        let seed = derive_seed(a.seed, &[i as u64]);
        let spec = match SimSpec::new(s.family, n, s.p, seed) {
            Ok(spec) => spec,
            Err(e) => return usage(e.to_string()),
        };
        let config = ExperimentConfig {
            spec,
            repetitions: reps,
            test_points: points,
            taus: s.taus.clone(),
            erf: ErfConfig {
                tau_n: s.tau_n,
                forest: ForestParams::default().with_trees(trees),
                intermediate_min_node_size: Some(5),
                ..ErfConfig::default()
            },
            methods: s.methods.clone(),
            cv: a.cv.then(CvPlan::default),
        };
        if let Err(e) = config.validate() {
            return usage(format!("{}: {e}", s.label));
        }
        eprintln!("running {} ({} repetitions)", s.label, reps);
        let report = run_experiment(&config).with_context(|| format!("setting {}", s.label))?;
        for (method, tau, rep, metric, value) in report.long_rows() {
            rows.push(vec![
                s.label.clone(),
                method.to_string(),
                tau.to_string(),
                rep.to_string(),
                metric.to_string(),
                value.to_string(),
            ]);
        }
        for m in &report.summary {
            eprintln!("  {:<13} tau={} sqrt_mise={:.4} failures={}", m.method, m.tau, m.sqrt_mise, m.failures);
        }
        summaries.push(SettingSummary {
            setting: s.label,
            family: s.family.to_string(),
            n,
            p: s.p,
            tau_n: s.tau_n,
            seed,
            summary: report.summary,
            selected: report.selected,
        });
    }

    let header = ["setting", "method", "tau", "repetition", "metric", "value"].map(String::from);
    write_atomic(&a.out_dir.join(format!("{name}.csv")), &to_csv(&header, &rows)?)?;
    let summary = Summary {
        experiment: name,
        seed: a.seed,
        cv: a.cv,
        scale: Scale { repetitions: reps, test_points: points, trees },
        settings: summaries,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&a.out_dir.join(format!("{name}.json")), &json)
}
