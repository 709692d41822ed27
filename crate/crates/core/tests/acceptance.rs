//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use criticality::detect::{
    detection_accuracy, estimate_gradient, grid_candidates, loss, sgd_optimize, DetectionDataset,
    DetectionItem, DetectorConfig, OptimizerConfig, ThresholdScorer,
};
use criticality::eval::{run_experiment, EvaluationReport, ExperimentConfig, Role};
use criticality::io;
use criticality::model::{
    aggregate_complexity, excess_complexity_ratio, next_regime, post_critical_update,
    pre_critical_update, step_system, volatility_factor_framework, DynamicsParams, Regime,
    SystemState, VolatilityMode,
};
use criticality::sim::{run_ensemble, run_simulation};
use criticality::stats::{
    derivative_series, expanding_sd, variability_shift, DerivativeSeries, SdAggregation,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn test_means(report: &EvaluationReport) -> Vec<(usize, f64, f64)> {
    report
        .results
        .iter()
        .map(|r| {
            let s = r
                .test_accuracy
                .as_ref()
                .expect("every benchmark count produced results");
            (r.benchmarks, 100.0 * s.mean, 100.0 * s.sd)
        })
        .collect()
}

fn criterion_1(report: &EvaluationReport, seconds: f64) -> Outcome {
    let m = test_means(report);
    let increasing = m.windows(2).all(|w| w[1].1 > w[0].1);
    let counts: Vec<usize> = m.iter().map(|x| x.0).collect();
    let summary: Vec<String> = m.iter().map(|(n, a, _)| format!("n={n} {a:.1}")).collect();
    outcome(
        increasing && counts == [2, 5, 10, 20] && seconds < 300.0,
        format!("test accuracy {} ({seconds:.1}s)", summary.join(", ")),
    )
}

fn criterion_2(report: &EvaluationReport) -> Outcome {
    let reference = [(5, 86.4), (10, 88.2), (20, 95.5)];
    let m = test_means(report);
    let at = |n: usize| m.iter().find(|x| x.0 == n).map(|x| x.1).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, r) in reference {
        let diff = at(n) - r;
        pass &= diff.abs() <= 10.0;
        parts.push(format!("n={n} {diff:+.1}pp"));
    }
    let gap = at(20) - at(2);
    pass &= gap >= 15.0;
    parts.push(format!("gap n=20 vs n=2 {gap:.1}pp"));
    outcome(pass, parts.join(", "))
}

fn criterion_3(report: &EvaluationReport) -> Outcome {
    let m = test_means(report);
    let sd = |n: usize| m.iter().find(|x| x.0 == n).map(|x| x.2).unwrap();
    outcome(
        sd(20) < sd(2),
        format!("test SD n=20 {:.2} vs n=2 {:.2}", sd(20), sd(2)),
    )
}

fn criterion_4(report: &EvaluationReport) -> Outcome {
    let r = report.result_for(20).unwrap();
    let detections: usize = r
        .repetitions
        .iter()
        .map(|o| o.detection_offsets.len())
        .sum();
    let in_window: usize = r.repetitions.iter().map(|o| o.histogram.in_window).sum();
    let scored: usize = r.repetitions.iter().map(|o| o.test_scored).sum();
    let share = in_window as f64 / detections as f64;
    outcome(
        share >= 0.85,
        format!(
            "n=20 {in_window}/{detections} detections in window ({:.1}%), {scored} scored runs",
            100.0 * share
        ),
    )
}

/// Every test ensemble of every repetition must show the shift in at least
/// 90% of its runs. Runs without a critical index count as failures.
fn criterion_5(config: &ExperimentConfig) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &n in &config.benchmark_counts {
        let mut worst = usize::MAX;
        for rep in 0..config.repetitions {
            let ensemble = config.ensemble(n, rep, Role::Test).unwrap();
            let shifted = ensemble
                .traces
                .iter()
                .filter(|t| {
                    let d = derivative_series(t, config.sd_aggregation).unwrap();
                    matches!(variability_shift(&d, t.critical_index, 20), Some((pre, post)) if post > pre)
                })
                .count();
            pass &= shifted * 10 >= ensemble.traces.len() * 9;
            worst = worst.min(shifted);
        }
        parts.push(format!("n={n} min {worst}/{}", config.test_runs));
    }
    outcome(
        pass,
        format!("shifted runs per test ensemble: {}", parts.join(", ")),
    )
}

/// Straightforward threshold scan, independent of the library's scoring.
fn oracle_accuracy(dataset: &DetectionDataset, theta: f64, burn_in: usize, window: usize) -> f64 {
    let mut hits = 0;
    for item in &dataset.items {
        let d = &item.derivatives;
        let mut detected = None;
        for k in 0..d.values.len() {
            let t = d.start_index + k;
            if t >= burn_in && d.values[k] > theta {
                detected = Some(t);
                break;
            }
        }
        if let Some(t) = detected {
            if t >= item.tau && t <= item.tau + window {
                hits += 1;
            }
        }
    }
    hits as f64 / dataset.items.len() as f64
}

fn naive_sd(prefix: &[f64]) -> f64 {
    let n = prefix.len() as f64;
    let m = prefix.iter().sum::<f64>() / n;
    (prefix.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn criterion_6() -> Outcome {
    let params = DynamicsParams::uniform(5);
    let ensemble = run_ensemble(&params, 10, 300, 606).unwrap();
    let (dataset, _) =
        DetectionDataset::from_traces(&ensemble.traces, SdAggregation::AgentMean).unwrap();
    let detector = DetectorConfig::default();
    let grid = grid_candidates(&dataset, 101).unwrap();
    let scorer = ThresholdScorer::new(&dataset, &detector).unwrap();
    let mut a_mismatch = 0;
    for &theta in &grid {
        let expected = oracle_accuracy(&dataset, theta, detector.burn_in, detector.window);
        let got = detection_accuracy(&dataset, &detector.with_theta(theta)).unwrap();
        if got != expected || scorer.accuracy(theta) != expected {
            a_mismatch += 1;
        }
    }

    let trace = &ensemble.traces[0];
    let mut b_worst: f64 = 0.0;
    for agent in 0..trace.n_agents() {
        let series = trace.agent_series(agent);
        for t in 1..series.len() {
            let got = expanding_sd(&series, t).unwrap();
            b_worst = b_worst.max((got - naive_sd(&series[..=t])).abs());
        }
    }
    for t in 1..trace.complexity.len() {
        let got = expanding_sd(&trace.complexity, t).unwrap();
        b_worst = b_worst.max((got - naive_sd(&trace.complexity[..=t])).abs());
    }

    let eps = 1e-4;
    let mut c_mismatch = 0;
    for &theta in grid.iter().step_by(5) {
        let quotient = (loss(&dataset, &detector, theta + eps).unwrap()
            - loss(&dataset, &detector, theta).unwrap())
            / eps;
        if estimate_gradient(&dataset, &detector, theta, eps).unwrap() != quotient {
            c_mismatch += 1;
        }
    }
    outcome(
        a_mismatch == 0 && b_worst <= 1e-12 && c_mismatch == 0,
        format!(
            "(a) {a_mismatch}/{} accuracy mismatches (b) max SD error {b_worst:.1e} (c) {c_mismatch} gradient mismatches",
            grid.len()
        ),
    )
}

fn criterion_7(config: &ExperimentConfig, first: &[u8]) -> Outcome {
    let again = io::to_json_bytes(&run_experiment(config).unwrap()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let threaded = pool.install(|| io::to_json_bytes(&run_experiment(config).unwrap()).unwrap());
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = single.install(|| io::to_json_bytes(&run_experiment(config).unwrap()).unwrap());
    let same = again == first && threaded == first && serial == first;
    outcome(
        same,
        format!(
            "{} report bytes, identical across repeat, 3-thread and 1-thread pools: {same}",
            first.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut violations = 0usize;
    for k in 0..1_000_000 {
        let p: f64 = rng.random();
        let out = if k % 2 == 0 {
            let gain = 2.0 * rng.sample::<f64, _>(StandardNormal);
            pre_critical_update(p, gain).unwrap()
        } else {
            let z: f64 = 4.0 * rng.sample::<f64, _>(StandardNormal);
            let vol = 3.0 * rng.random::<f64>() + 0.1;
            post_critical_update(p, z, vol, rng.random::<f64>()).unwrap()
        };
        if !(0.0..=1.0).contains(&out) {
            violations += 1;
        }
    }

    let fixpoint = (0..=100).all(|k| {
        let p = k as f64 / 100.0;
        pre_critical_update(p, 0.0).unwrap() == p
            && post_critical_update(p, 0.0, 2.7, 0.3).unwrap() == p
    });

    // Replay the RNG under each branch; exactly one must reproduce the step.
    let mut exclusive = true;
    for mode in [VolatilityMode::Framework, VolatilityMode::Experiment] {
        let params = DynamicsParams {
            volatility_mode: mode,
            ..DynamicsParams::uniform(4)
        };
        let mut draws = ChaCha8Rng::seed_from_u64(7);
        for step in 0..400u64 {
            let performances: Vec<f64> = (0..4).map(|_| draws.random()).collect();
            let state = SystemState {
                t: 0,
                performances: performances.clone(),
                volatility_factors: vec![0.2, 0.4, 0.6, 0.8],
                post_critical: false,
            };
            let next = step_system(&state, &params, &mut ChaCha8Rng::seed_from_u64(step)).unwrap();
            let mut pre_rng = ChaCha8Rng::seed_from_u64(step);
            let pre: Vec<f64> = performances
                .iter()
                .map(|&p| {
                    let mu = 0.05 * pre_rng.random::<f64>();
                    let z: f64 = pre_rng.sample(StandardNormal);
                    pre_critical_update(p, mu + 0.01 * z).unwrap()
                })
                .collect();
            let c = aggregate_complexity(&performances, &params.weights).unwrap();
            let framework = volatility_factor_framework(excess_complexity_ratio(c, 0.8).unwrap());
            let mut post_rng = ChaCha8Rng::seed_from_u64(step);
            let post: Vec<f64> = performances
                .iter()
                .zip(&state.volatility_factors)
                .map(|(&p, &agent)| {
                    let z: f64 = post_rng.sample(StandardNormal);
                    let vol = if mode == VolatilityMode::Framework {
                        framework
                    } else {
                        agent
                    };
                    post_critical_update(p, z, vol, params.sigma_var).unwrap()
                })
                .collect();
            let regime = next_regime(&state, &params).unwrap();
            let matches_pre = next.performances == pre;
            let matches_post = next.performances == post;
            exclusive &= matches_pre != matches_post;
            exclusive &= matches_pre == (regime == Regime::PreCritical);
            exclusive &= matches_post == (c > 0.8);
        }
    }

    let params = DynamicsParams {
        sigma_base: 0.0,
        mu_gain_min: 0.05,
        mu_gain_max: 0.05,
        c_max: 1.1,
        init_range: (0.5, 0.5),
        ..DynamicsParams::uniform(1)
    };
    let trace = run_simulation(&params, 300, 1).unwrap();
    let mut p: f64 = 0.5;
    let mut worst: f64 = 0.0;
    for t in 0..=300 {
        worst = worst.max((trace.performances[t][0] - p).abs());
        p = (p + 0.05 / (1.0 + p)).min(1.0);
    }
    let pass = violations == 0 && fixpoint && exclusive && worst <= 1e-12;
    outcome(
        pass,
        format!(
            "{violations} clamp violations in 1e6 updates, fixpoint {fixpoint}, branch exclusivity {exclusive}, recurrence error {worst:.1e}"
        ),
    )
}

fn criterion_9(config: &ExperimentConfig) -> Outcome {
    let detector = config.detector.detector(0.0);
    let mut datasets = 0;
    let mut failures = Vec::new();
    let mut max_iterations = 0;
    for &n in &config.benchmark_counts {
        for rep in 0..config.repetitions {
            let train = config.ensemble(n, rep, Role::Train).unwrap();
            let (ds, _) =
                DetectionDataset::from_traces(&train.traces, config.sd_aggregation).unwrap();
            let opt_config = config.optimizer.config_for(&ds).unwrap();
            let result = sgd_optimize(&ds, &detector, &opt_config).unwrap();
            let best_grid = opt_config
                .grid
                .iter()
                .flatten()
                .map(|&theta| oracle_accuracy(&ds, theta, detector.burn_in, detector.window))
                .fold(0.0, f64::max);
            max_iterations = max_iterations.max(result.iterations);
            if result.iterations > config.optimizer.max_iterations
                || result.final_accuracy < best_grid
            {
                failures.push(format!("n={n} rep={rep}"));
            }
            datasets += 1;
        }
    }

    // Far above every derivative the loss is flat at zero accuracy.
    let flat = DetectionDataset::new(vec![DetectionItem {
        derivatives: DerivativeSeries {
            values: vec![0.01, -0.02, 0.03, 0.0],
            start_index: 2,
        },
        tau: 3,
    }])
    .unwrap();
    let flat_config = OptimizerConfig {
        initial_threshold: 5.0,
        grid: None,
        ..OptimizerConfig::default()
    };
    let r = sgd_optimize(&flat, &detector, &flat_config).unwrap();
    let flat_ok = r.iterations == 1 && r.converged && r.theta_star == 5.0;
    outcome(
        failures.is_empty() && flat_ok,
        format!(
            "{datasets} training datasets, max {max_iterations} iterations, {} below best grid accuracy, flat loss converged at once: {flat_ok}",
            failures.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let params = DynamicsParams::uniform(5);
    let ensemble = run_ensemble(&params, 20, 300, 1010).unwrap();
    let path = dir.path().join("traces.csv");
    io::export_traces_csv(&ensemble.traces, &path).unwrap();
    let back = io::ingest_trace_csv(&path).unwrap();
    let round_trip = back.len() == ensemble.traces.len()
        && back.into_iter().zip(&ensemble.traces).all(|(run, orig)| {
            let trace = run.into_trace(&params.weights, params.c_max).unwrap();
            trace.performances == orig.performances
                && trace.complexity == orig.complexity
                && trace.critical_index == orig.critical_index
        });

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let small = ExperimentConfig {
        steps: 5,
        master_seed: 2024,
        ..ExperimentConfig::default()
    };
    let small_ensemble = run_ensemble(
        &small.dynamics.params_for(2).unwrap(),
        2,
        small.steps,
        small.ensemble_seed(2, 0, Role::Train),
    )
    .unwrap();
    let small_path = dir.path().join("small.csv");
    let (traces, companion) = io::export_traces_csv(&small_ensemble.traces, &small_path).unwrap();
    let same = |a: &Path, b: &str| fs::read(a).unwrap() == fs::read(golden.join(b)).unwrap();
    let traces_golden =
        same(&traces, "small_traces.csv") && same(&companion, "small_traces_complexity.csv");
    let schema_path = io::write_schema(dir.path()).unwrap();
    let schema_golden = same(&schema_path, "schema.json");
    outcome(
        round_trip && traces_golden && schema_golden,
        format!("round trip exact {round_trip}, golden traces {traces_golden}, golden schema {schema_golden}"),
    )
}

fn main() -> ExitCode {
    let config = ExperimentConfig::default();
    let start = std::time::Instant::now();
    let report = run_experiment(&config).expect("default experiment runs");
    let seconds = start.elapsed().as_secs_f64();
    let bytes = io::to_json_bytes(&report).unwrap();

    let results = [
        (1, criterion_1(&report, seconds)),
        (2, criterion_2(&report)),
        (3, criterion_3(&report)),
        (4, criterion_4(&report)),
        (5, criterion_5(&config)),
        (6, criterion_6()),
        (7, criterion_7(&config, &bytes)),
        (8, criterion_8()),
        (9, criterion_9(&config)),
        (10, criterion_10()),
    ];
    let mut failed = 0;
    for (k, r) in &results {
        println!(
            "criterion {k:>2}: {} {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
