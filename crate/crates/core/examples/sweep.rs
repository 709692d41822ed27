//! Reduced-scale parameter sweep over the post-critical dynamics.
//!
//! ```text
//! cargo run --release -p criticality --example sweep -- sigma_var=0.5 mode=framework regime=absorbing reps=5
//! ```

use criticality::eval::{run_experiment, ExperimentConfig, Role};
use criticality::model::{RegimeRule, VolatilityMode};
use criticality::stats::{derivative_series, variability_shift};

fn main() -> criticality::Result<()> {
    let mut config = ExperimentConfig {
        repetitions: 5,
        ..ExperimentConfig::default()
    };
    for arg in std::env::args().skip(1) {
        let (key, value) = arg.split_once('=').expect("arguments are key=value");
        match key {
            "sigma_var" => config.dynamics.sigma_var = value.parse().unwrap(),
            "mode" => {
                config.dynamics.volatility_mode = match value {
                    "framework" => VolatilityMode::Framework,
                    _ => VolatilityMode::Experiment,
                }
            }
            "regime" => {
                config.dynamics.regime_rule = match value {
                    "per_step" => RegimeRule::PerStep,
                    _ => RegimeRule::Absorbing,
                }
            }
            "reps" => config.repetitions = value.parse().unwrap(),
            "seed" => config.master_seed = value.parse().unwrap(),
            "steps" => config.steps = value.parse().unwrap(),
            other => panic!("unknown key {other}"),
        }
    }
    let report = run_experiment(&config)?;
    for r in &report.results {
        let train = r.train_accuracy.as_ref().unwrap();
        let test = r.test_accuracy.as_ref().unwrap();
        let in_window: usize = r.repetitions.iter().map(|o| o.histogram.in_window).sum();
        let detected: usize = r.repetitions.iter().map(|o| o.histogram.total).sum();

        let ensemble = config.ensemble(r.benchmarks, 0, Role::Test)?;
        let mut dominant = 0;
        for trace in &ensemble.traces {
            let d = derivative_series(trace, config.sd_aggregation)?;
            if let Some((pre, post)) = variability_shift(&d, trace.critical_index, 20) {
                dominant += usize::from(post > pre);
            }
        }
        println!(
            "n={:>2} train {:5.1}±{:4.1} test {:5.1}±{:4.1} detections-in-window {:5.1}% shift {:3}/{}",
            r.benchmarks,
            100.0 * train.mean,
            100.0 * train.sd,
            100.0 * test.mean,
            100.0 * test.sd,
            100.0 * in_window as f64 / detected.max(1) as f64,
            dominant,
            ensemble.traces.len(),
        );
    }
    Ok(())
}
