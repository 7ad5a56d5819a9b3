//! End-to-end checks at their stated tolerances. Each test prints one
//! PASS/FAIL line (bypassing output capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use erf_core::archive::ModelArchive;
use erf_core::erf::{erf_fit, gpd_extrapolate, ErfConfig, ErfModel, Estimator};
use erf_core::forest::{fit_forest, similarity_weights, ForestParams, Node};
use erf_core::gpd::{
    gpd_cdf, gpd_quantile, grimshaw_fit, penalized_fit, weighted_nll, ExceedanceSample, GpdParams, PenaltyConfig,
    ThetaBox,
};
use erf_core::rng::{derive_seed, seeded_rng};
use erf_core::sim::{
    generate, halton_grid, run_experiment, true_quantile, true_tail, wang_loss, EvalReport,
    ExperimentConfig, Family, Method, SimSpec,
};
use erf_core::{CvPlan, TrainingSet};
use rand::Rng;

fn report(label: &str, pass: bool, detail: String, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] {verdict} {label}: {detail} ({:.1}s)\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

fn gpd_draw<R: Rng>(rng: &mut R, sigma: f64, xi: f64) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    sigma * (-xi * u.ln()).exp_m1() / xi
}

#[test]
fn grimshaw_fit_matches_brute_force_grid() {
    let start = Instant::now();
    let theta_box = ThetaBox::default();
    let mut worst = f64::NEG_INFINITY;
    for s in 0..20u64 {
        let mut rng = seeded_rng(derive_seed(11, &[s]));
        let n = rng.random_range(5..=50);
        let xi = rng.random_range(-0.4..0.8);
        let z: Vec<f64> = (0..n).map(|_| gpd_draw(&mut rng, 1.0, xi)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let sample = ExceedanceSample::new(z.clone(), w.clone()).unwrap();
        let fit = grimshaw_fit(&sample, &theta_box).unwrap();
        let at_fit = weighted_nll(&fit.params, &sample).unwrap();

        let zbar = z.iter().zip(&w).map(|(z, w)| z * w).sum::<f64>() / w.iter().sum::<f64>();
        let (s_lo, s_hi) = ((theta_box.sigma_lo_rel * zbar).ln(), (theta_box.sigma_hi_rel * zbar).ln());
        let mut grid_min = f64::INFINITY;
        for i in 0..400 {
            let sigma = (s_lo + (s_hi - s_lo) * i as f64 / 399.0).exp();
            for j in 0..400 {
                let xi = theta_box.xi_lo + (theta_box.xi_hi - theta_box.xi_lo) * j as f64 / 399.0;
                let v = weighted_nll(&GpdParams { sigma, xi }, &sample).unwrap();
                grid_min = grid_min.min(v);
            }
        }
        worst = worst.max(at_fit - grid_min);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(10);
    report("Grimshaw fit vs 400x400 grid", pass, format!("max(nll_fit - grid_min) = {worst:.3e}"), elapsed);
    assert!(pass);
}

fn recovery_medians(n: usize) -> (f64, f64) {
    let spec = SimSpec::new(Family::GpdStep { xi: 0.25 }, n, 5, 1).unwrap();
    let data = generate(&spec).unwrap();
    let config = ErfConfig {
        forest: ForestParams::default().with_trees(500).with_min_node_size(n / 50).with_seed(1),
        ..ErfConfig::default()
    };
    let model = erf_fit(&data, &config).unwrap();
    let (mut dxi, mut dsigma) = (Vec::new(), Vec::new());
    for x in halton_grid(50, 5).chunks(5) {
        let fit = model.predict_gpd_params(x).unwrap();
        let truth = true_tail(&spec, x, config.tau_n).unwrap().unwrap();
        dxi.push((fit.xi - truth.xi).abs());
        dsigma.push((fit.sigma / truth.sigma - 1.0).abs());
    }
    (median(&dxi), median(&dsigma))
}

#[test]
fn exact_gpd_tail_is_recovered() {
    let start = Instant::now();
    let small = recovery_medians(2000);
    let mid = recovery_medians(5000);
    let large = recovery_medians(8000);
    let elapsed = start.elapsed();
    let pass = mid.0 < 0.1
        && mid.1 < 0.15
        && large.0 < small.0
        && large.1 < small.1
        && elapsed < Duration::from_secs(120);
    report(
        "exact GPD recovery",
        pass,
        format!(
            "median |xi err| n=2000/5000/8000: {:.4}/{:.4}/{:.4}; median |sigma rel err|: {:.4}/{:.4}/{:.4}",
            small.0, mid.0, large.0, small.1, mid.1, large.1
        ),
        elapsed,
    );
    assert!(pass);
}

fn classical_hill(y: &[f64], k: usize) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let threshold = s[k];
    s[..k].iter().map(|v| (v / threshold).ln()).sum::<f64>() / k as f64
}

#[test]
fn hill_reduces_to_classical_hill() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for s in 0..10u64 {
        let mut rng = seeded_rng(derive_seed(33, &[s]));
        // n (1 - tau_n) integral, so the forest's tau_n quantile is Y_(n-k).
        let n = 5 * rng.random_range(10..80);
        let tau_n = 0.8;
        let y: Vec<f64> = (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-0.3)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let data = TrainingSet::from_flat(x, 1, y.clone()).unwrap();
        let params = ForestParams {
            num_trees: 1,
            subsample_size: Some(n),
            honest: false,
            min_node_size: n / 2 + 1,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params).unwrap();
        let k = ((n as f64) * (1.0 - tau_n)).round() as usize;
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let thresholds = vec![sorted[k]; n];
        let model = ErfModel::from_parts(
            data,
            tau_n,
            forest.clone(),
            Some(forest),
            thresholds,
            0.0,
            0.0,
            ThetaBox::default(),
        )
        .unwrap();
        assert_eq!(model.intermediate_quantile(&[0.5]).unwrap(), sorted[k]);
        let h = model.hill_estimate(&[0.5]).unwrap();
        worst = worst.max((h - classical_hill(&y, k)).abs());
    }
    let pass = worst < 1e-12;
    report("Hill reduction", pass, format!("max |forest Hill - classical Hill| = {worst:.2e}"), start.elapsed());
    assert!(pass);
}

#[test]
fn penalty_limits() {
    let start = Instant::now();
    let theta_box = ThetaBox::default();
    let (mut zero_gap, mut pin_gap) = (0.0f64, 0.0f64);
    for s in 0..10u64 {
        let mut rng = seeded_rng(derive_seed(44, &[s]));
        let n = rng.random_range(20..200);
        let z: Vec<f64> = (0..n).map(|_| gpd_draw(&mut rng, 2.0, 0.2)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let sample = ExceedanceSample::new(z, w).unwrap();
        let plain = grimshaw_fit(&sample, &theta_box).unwrap().params;
        let scale = rng.random_range(0.5..2.0);
        let at_zero = penalized_fit(&sample, &PenaltyConfig::new(0.0, 0.7, scale).unwrap(), &theta_box).unwrap().params;
        zero_gap = zero_gap.max((at_zero.sigma - plain.sigma).abs()).max((at_zero.xi - plain.xi).abs());
        let anchor = rng.random_range(-0.3..0.6);
        let pinned =
            penalized_fit(&sample, &PenaltyConfig::new(1e6, anchor, scale).unwrap(), &theta_box).unwrap().params;
        pin_gap = pin_gap.max((pinned.xi - anchor).abs());
    }
    let pass = zero_gap < 1e-6 && pin_gap < 1e-3;
    report(
        "penalty limits",
        pass,
        format!("lambda=0 max param gap {zero_gap:.2e}; lambda=1e6 max |xi - anchor| {pin_gap:.2e}"),
        start.elapsed(),
    );
    assert!(pass);
}

fn experiment1(p: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        spec: SimSpec::new(Family::Example1, 2000, p, seed).unwrap(),
        repetitions: 10,
        test_points: 200,
        taus: vec![0.9995],
        erf: ErfConfig {
            forest: ForestParams::default().with_trees(500),
            intermediate_min_node_size: Some(5),
            ..ErfConfig::default()
        },
        methods: vec![Method::Erf, Method::Unconditional, Method::Baseline],
        cv: Some(CvPlan::default()),
    }
}

fn sqrt_mise(report: &EvalReport, method: Method, tau: f64) -> f64 {
    report.summary_for(method, tau).unwrap().sqrt_mise
}

#[test]
fn erf_beats_baselines_in_experiment_one() {
    let start = Instant::now();
    let r = run_experiment(&experiment1(10, 1)).unwrap();
    let (erf, uncond, base) =
        (sqrt_mise(&r, Method::Erf, 0.9995), sqrt_mise(&r, Method::Unconditional, 0.9995), sqrt_mise(&r, Method::Baseline, 0.9995));
    let elapsed = start.elapsed();
    let pass = erf < 0.7 * base && erf < uncond && elapsed < Duration::from_secs(15 * 60);
    report(
        "experiment 1 ordering",
        pass,
        format!(
            "sqrt MISE erf {erf:.3}, baseline {base:.3} (ratio {:.3}, need < 0.7), unconditional {uncond:.3}",
            erf / base
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn erf_is_flat_across_dimensions() {
    let start = Instant::now();
    let values: Vec<f64> = [5, 20, 40]
        .iter()
        .map(|&p| {
            let mut config = experiment1(p, 1);
            config.methods = vec![Method::Erf];
            sqrt_mise(&run_experiment(&config).unwrap(), Method::Erf, 0.9995)
        })
        .collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let change = (hi - lo) / lo;
    let elapsed = start.elapsed();
    let pass = change < 0.5 && elapsed < Duration::from_secs(45 * 60);
    report(
        "dimension robustness",
        pass,
        format!("sqrt MISE erf at p=5/20/40: {:.3}/{:.3}/{:.3}; relative spread {change:.3}", values[0], values[1], values[2]),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn cross_validation_selects_near_best_leaf_size() {
    let start = Instant::now();
    let grid = [10usize, 40, 100];
    let base = ExperimentConfig {
        methods: vec![Method::Erf],
        cv: None,
        ..experiment1(10, 7)
    };
    let fixed: Vec<f64> = grid
        .iter()
        .map(|&kappa| {
            let mut c = base.clone();
            c.erf.forest.min_node_size = kappa;
            sqrt_mise(&run_experiment(&c).unwrap(), Method::Erf, 0.9995)
        })
        .collect();
    let tuned_config = ExperimentConfig {
        cv: Some(CvPlan { kappa_grid: grid.to_vec(), lambda_grid: vec![0.0], ..CvPlan::default() }),
        ..base
    };
    let tuned_report = run_experiment(&tuned_config).unwrap();
    let tuned = sqrt_mise(&tuned_report, Method::Erf, 0.9995);
    let best = fixed.iter().copied().fold(f64::INFINITY, f64::min);
    let chosen: Vec<usize> = tuned_report.selected.iter().map(|s| s.kappa).collect();
    let elapsed = start.elapsed();
    let pass = tuned <= 1.15 * best && elapsed < Duration::from_secs(20 * 60);
    report(
        "cross-validation sanity",
        pass,
        format!(
            "sqrt MISE fixed kappa 10/40/100: {:.3}/{:.3}/{:.3}; cross-validated {tuned:.3} (ratio to best {:.3}); chosen {chosen:?}",
            fixed[0],
            fixed[1],
            fixed[2],
            tuned / best
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn wang_loss_is_calibrated_under_the_oracle() {
    let start = Instant::now();
    let tau = 0.9;
    let mut inside = 0;
    for rep in 0..200u64 {
        let spec = SimSpec::new(Family::Example1, 10_000, 2, derive_seed(88, &[rep])).unwrap();
        let data = generate(&spec).unwrap();
        let q: Vec<f64> = (0..data.n()).map(|i| true_quantile(&spec, data.row(i), tau).unwrap()).collect();
        if wang_loss(&q, data.y(), tau).unwrap().abs() < 1.96 {
            inside += 1;
        }
    }
    let elapsed = start.elapsed();
    let share = inside as f64 / 200.0;
    let pass = share >= 0.92 && elapsed < Duration::from_secs(60);
    report("Wang loss calibration", pass, format!("|R_n| < 1.96 in {inside}/200 repetitions"), elapsed);
    assert!(pass);
}

fn sensitivity(family: &str, tau_n: f64) -> EvalReport {
    let config = ExperimentConfig {
        spec: SimSpec::new(family.parse().unwrap(), 1000, 2, 5).unwrap(),
        repetitions: 20,
        test_points: 100,
        taus: vec![0.9995],
        erf: ErfConfig {
            tau_n,
            forest: ForestParams::default().with_trees(500),
            ..ErfConfig::default()
        },
        methods: vec![Method::Erf, Method::HillWeissman],
        cv: None,
    };
    run_experiment(&config).unwrap()
}

#[test]
fn sensitivity_pattern() {
    let start = Instant::now();
    let pareto = sensitivity("sens-pareto-scale-step", 0.8);
    let student = sensitivity("sens-student-scale-step", 0.5);
    let get = |r: &EvalReport, m| r.summary_for(m, 0.9995).unwrap().clone();
    let (pe, ph) = (get(&pareto, Method::Erf), get(&pareto, Method::HillWeissman));
    let (se, sh) = (get(&student, Method::Erf), get(&student, Method::HillWeissman));
    let elapsed = start.elapsed();
    let pass = ph.median_ise <= pe.median_ise && se.median_ise < sh.median_ise && elapsed < Duration::from_secs(600);
    report(
        "sensitivity pattern",
        pass,
        format!(
            "pareto tau_n=0.8 median ISE hill {:.3} vs erf {:.3}; student tau_n=0.5 median ISE erf {:.3} vs hill {:.3} \
             (hill undefined in {}/20 repetitions: non-positive intermediate quantile)",
            ph.median_ise, pe.median_ise, se.median_ise, sh.median_ise, sh.failures
        ),
        elapsed,
    );
    assert!(pass);
}

fn small_model(seed: u64, threads: usize) -> (ErfModel, Vec<u64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let data = generate(&SimSpec::new(Family::Example1, 300, 3, seed).unwrap()).unwrap();
        let config = ErfConfig {
            forest: ForestParams::default().with_trees(20).with_min_node_size(10).with_seed(seed),
            lambda: 0.001,
            ..ErfConfig::default()
        };
        let model = erf_fit(&data, &config).unwrap();
        let bits = halton_grid(10, 3)
            .chunks(3)
            .flat_map(|x| {
                model
                    .predict_quantiles(x, &[0.9, 0.99, 0.999], Estimator::Erf)
                    .map(|v| v.into_iter().map(|q| q.q_extreme.to_bits()).collect::<Vec<u64>>())
                    .unwrap_or_default()
            })
            .collect();
        (model, bits)
    })
}

#[test]
fn property_suites() {
    let start = Instant::now();
    let mut failures: Vec<&str> = Vec::new();

    // Weight normalization.
    let data = generate(&SimSpec::new(Family::Example1, 400, 4, 2).unwrap()).unwrap();
    let forest = fit_forest(&data, &ForestParams::default().with_trees(50).with_min_node_size(10)).unwrap();
    let grid = halton_grid(50, 4);
    let weights_ok = grid.chunks(4).all(|x| {
        let w = similarity_weights(&forest, x).unwrap();
        w.as_slice().iter().all(|&v| v >= 0.0) && (w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12
    });
    if !weights_ok {
        failures.push("weight normalization");
    }

    // Distribution function and quantile invert each other.
    let mut roundtrip_ok = true;
    for &sigma in &[0.3, 1.0, 4.0] {
        for &xi in &[-0.4, -1e-9, 0.0, 1e-9, 0.25, 1.5] {
            let theta = GpdParams::new(sigma, xi).unwrap();
            for &p in &[0.0, 0.1, 0.5, 0.9, 0.999] {
                let z = gpd_quantile(p, &theta).unwrap();
                roundtrip_ok &= (gpd_cdf(z, &theta).unwrap() - p).abs() < 1e-9;
            }
        }
    }
    if !roundtrip_ok {
        failures.push("cdf/quantile round trip");
    }

    // Extrapolated quantiles increase with the level.
    let (model, _) = small_model(3, 1);
    let taus = [0.81, 0.9, 0.95, 0.99, 0.999, 0.9999];
    let monotone = grid.chunks(4).map(|x| &x[..3]).all(|x| {
        [Estimator::Erf, Estimator::Hill, Estimator::ExpShape].into_iter().all(|e| match model.predict_quantiles(x, &taus, e) {
            Ok(v) => v.windows(2).all(|w| w[1].q_extreme >= w[0].q_extreme),
            Err(_) => true,
        })
    });
    let theta = GpdParams::new(1.0, -0.3).unwrap();
    let bounded_monotone = taus.windows(2).all(|w| {
        gpd_extrapolate(1.0, &theta, 0.8, w[1]).unwrap() >= gpd_extrapolate(1.0, &theta, 0.8, w[0]).unwrap()
    });
    if !(monotone && bounded_monotone) {
        failures.push("extrapolation monotonicity");
    }

    // Honest trees: disjoint halves, leaves filled from the prediction half
    // only, leaf sizes within the band.
    let kappa = forest.params().min_node_size;
    let honest_ok = forest.trees().iter().all(|tree| {
        let split = tree.split_indices();
        let pred = tree.prediction_indices();
        split.iter().all(|i| !pred.contains(i))
            && tree.nodes().iter().all(|node| match node {
                Node::Leaf { members } => {
                    members.iter().all(|i| pred.contains(i)) && members.len() >= kappa && members.len() < 2 * kappa
                }
                Node::Split { .. } => true,
            })
    });
    if !honest_ok {
        failures.push("honest split structure");
    }

    // Archive round trip with bit-identical predictions.
    let mut archive_ok = true;
    for seed in 0..5 {
        let (model, bits) = small_model(seed, 1);
        let loaded = ModelArchive::from_bytes(&ModelArchive { seed, model: model.clone() }.to_bytes()).unwrap().model;
        archive_ok &= loaded == model;
        let reloaded_bits: Vec<u64> = halton_grid(10, 3)
            .chunks(3)
            .flat_map(|x| {
                loaded
                    .predict_quantiles(x, &[0.9, 0.99, 0.999], Estimator::Erf)
                    .map(|v| v.into_iter().map(|q| q.q_extreme.to_bits()).collect::<Vec<u64>>())
                    .unwrap_or_default()
            })
            .collect();
        archive_ok &= reloaded_bits == bits;
    }
    if !archive_ok {
        failures.push("archive round trip");
    }

    // Same results for any number of worker threads.
    let one = small_model(9, 1);
    let four = small_model(9, 4);
    let three = small_model(9, 3);
    let experiment = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut c = experiment1(2, 4);
        c.spec.n = 300;
        c.repetitions = 3;
        c.test_points = 20;
        c.erf.forest.num_trees = 20;
        c.erf.forest.min_node_size = 10;
        c.cv = None;
        pool.install(|| run_experiment(&c).unwrap())
    };
    let deterministic = one == four && one == three && experiment(1) == experiment(4);
    if !deterministic {
        failures.push("determinism across worker counts");
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "weights, cdf/quantile, monotonicity, honesty, archive, thread determinism".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    report("property suites", pass, detail, start.elapsed());
    assert!(pass);
}
