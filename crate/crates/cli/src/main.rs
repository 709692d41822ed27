use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use criticality::detect::{detect_critical_time, sgd_optimize, DetectionDataset};
use criticality::eval::{run_experiment, ExperimentConfig, Role};
use criticality::io::{self, RunManifest};
use criticality::sim::{run_ensemble, SimulationTrace};
use criticality::stats::derivative_series;
use criticality::{Error, Result};

/// Simulate benchmark ensembles crossing a complexity threshold and detect
/// the onset of post-critical instability.
#[derive(Debug, Parser)]
#[command(name = "criticality", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed; overrides `master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file, or `default` for the built-in settings.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an ensemble and export its traces as CSV.
    Simulate {
        /// Benchmark count; defaults to the first configured count.
        #[arg(long)]
        benchmarks: Option<usize>,
        /// Number of runs; defaults to `train_runs`.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Calibrate the detection threshold on a training ensemble.
    Optimize {
        #[arg(long)]
        benchmarks: Option<usize>,
        /// Trace CSV to train on instead of simulating one.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Run the full train/test protocol and write the report and figure data.
    Evaluate,
    /// Apply a threshold to every run of a trace CSV.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
    },
}

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', "; "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut config = io::load_config(&cli.common.config)?;
    if let Some(seed) = cli.common.seed {
        config.master_seed = seed;
    }
    let out = &cli.common.out;
    let mut manifest = RunManifest::new(&config, argv);
    match cli.command {
        Command::Simulate { benchmarks, runs } => {
            simulate(&config, benchmarks, runs, out, &mut manifest)?
        }
        Command::Optimize { benchmarks, traces } => {
            optimize(&config, benchmarks, traces.as_deref(), out, &mut manifest)?
        }
        Command::Evaluate => evaluate(&config, out, &mut manifest)?,
        Command::Detect { trace, theta } => detect(&config, &trace, theta, out, &mut manifest)?,
    }
    let schema = io::write_schema(out)?;
    manifest.record(out, &schema)?;
    manifest.write(out)?;
    Ok(())
}

fn benchmark_count(config: &ExperimentConfig, requested: Option<usize>) -> Result<usize> {
    let n = requested.unwrap_or(config.benchmark_counts[0]);
    config.dynamics.params_for(n).map_err(|e| Error::Config {
        path: "--benchmarks".into(),
        message: e.to_string(),
    })?;
    Ok(n)
}

fn simulate(
    config: &ExperimentConfig,
    benchmarks: Option<usize>,
    runs: Option<usize>,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let n = benchmark_count(config, benchmarks)?;
    let runs = runs.unwrap_or(config.train_runs);
    let seed = config.ensemble_seed(n, 0, Role::Train);
    let ensemble = run_ensemble(&config.dynamics.params_for(n)?, runs, config.steps, seed)?;
    let (traces, companion) = io::export_traces_csv(&ensemble.traces, &out.join("traces.csv"))?;
    manifest.record(out, &traces)?;
    manifest.record(out, &companion)?;
    let missing = ensemble.non_critical_count();
    if missing > 0 {
        manifest.notes.push(format!(
            "{missing} of {runs} runs never reached criticality"
        ));
    }
    say!(
        "simulated {runs} runs with {n} benchmarks ({missing} never critical) -> {}",
        traces.display()
    );
    Ok(())
}

fn ingest(config: &ExperimentConfig, path: &Path) -> Result<Vec<SimulationTrace>> {
    io::ingest_trace_csv(path)?
        .into_iter()
        .map(|run| {
            let n = run.performances.first().map_or(0, Vec::len);
            let params = config.dynamics.params_for(n)?;
            run.into_trace(&params.weights, params.c_max)
        })
        .collect()
}

#[derive(Serialize)]
struct OptimizeOutput {
    benchmarks: usize,
    train_seed: Option<u64>,
    train_scored: usize,
    train_excluded: usize,
    result: criticality::detect::OptimizerResult,
}

fn optimize(
    config: &ExperimentConfig,
    benchmarks: Option<usize>,
    traces: Option<&Path>,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let (n, train_seed, traces) = match traces {
        Some(path) => {
            let traces = ingest(config, path)?;
            let n = traces.first().map_or(0, SimulationTrace::n_agents);
            (n, None, traces)
        }
        None => {
            let n = benchmark_count(config, benchmarks)?;
            let ensemble = config.ensemble(n, 0, Role::Train)?;
            (n, Some(ensemble.base_seed), ensemble.traces)
        }
    };
    let (dataset, excluded) = DetectionDataset::from_traces(&traces, config.sd_aggregation)?;
    if dataset.is_empty() {
        return Err(Error::EmptyAlignment { excluded });
    }
    let result = sgd_optimize(
        &dataset,
        &config.detector.detector(0.0),
        &config.optimizer.config_for(&dataset)?,
    )?;
    say!(
        "theta_star = {} (train accuracy {:.3}, {} iterations{})",
        result.theta_star,
        result.final_accuracy,
        result.iterations,
        if result.converged { ", converged" } else { "" }
    );
    let path = out.join("optimizer.json");
    io::write_json(
        &OptimizeOutput {
            benchmarks: n,
            train_seed,
            train_scored: dataset.len(),
            train_excluded: excluded,
            result,
        },
        &path,
    )?;
    manifest.record(out, &path)
}

fn evaluate(config: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let report = run_experiment(config)?;
    let path = out.join("report.json");
    io::write_json(&report, &path)?;
    manifest.record(out, &path)?;

    for result in &report.results {
        let n = result.benchmarks;
        match (&result.test_accuracy, &result.train_accuracy) {
            (Some(test), Some(train)) => say!(
                "n={n:<3} train {:.1} ± {:.1}  test {:.1} ± {:.1}",
                100.0 * train.mean,
                100.0 * train.sd,
                100.0 * test.mean,
                100.0 * test.sd
            ),
            _ => say!("n={n:<3} no repetition produced a result"),
        }
        for failure in &result.failures {
            manifest.notes.push(format!(
                "n={n} repetition {}: {}",
                failure.repetition, failure.message
            ));
        }
        let Some(first) = result.repetitions.iter().find(|o| o.repetition == 0) else {
            manifest
                .notes
                .push(format!("n={n}: figures skipped, repetition 0 failed"));
            continue;
        };
        let figures = io::figure_set(config, n, first.theta_star, first.histogram.clone())?;
        let (written, notes) = io::write_figure_files(&figures, config, out)?;
        for file in written {
            manifest.record(out, &file)?;
        }
        manifest.notes.extend(notes);
    }
    Ok(())
}

#[derive(Serialize)]
struct Detection {
    run_id: usize,
    detected_t: Option<usize>,
}

#[derive(Serialize)]
struct DetectOutput {
    theta: f64,
    burn_in: usize,
    runs: Vec<Detection>,
}

fn detect(
    config: &ExperimentConfig,
    trace: &Path,
    theta: f64,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let detector = config.detector.detector(theta);
    let mut runs = Vec::new();
    for trace in ingest(config, trace)? {
        let derivatives = derivative_series(&trace, config.sd_aggregation)?;
        let detected_t = detect_critical_time(&derivatives, &detector);
        match detected_t {
            Some(t) => say!("run {}: detected at t = {t}", trace.run_id),
            None => say!("run {}: no detection", trace.run_id),
        }
        runs.push(Detection {
            run_id: trace.run_id,
            detected_t,
        });
    }
    let path = out.join("detections.json");
    io::write_json(
        &DetectOutput {
            theta,
            burn_in: detector.burn_in,
            runs,
        },
        &path,
    )?;
    manifest.record(out, &path)
}
