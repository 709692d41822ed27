//! The train/test protocol: for each benchmark count and repetition, fresh
//! training and test ensembles are simulated, the threshold is calibrated on
//! the training runs, and both accuracies are recorded.
//!
//! Seeds are derived from `(master_seed, n, repetition, role)`, so adding a
//! benchmark count or repetition never changes the data of existing ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    detect_critical_time, detection_accuracy, grid_candidates, sgd_optimize, DetectionDataset,
    DetectorConfig, OptimizerConfig, DEFAULT_BURN_IN, DEFAULT_EPSILON, DEFAULT_GRID_SIZE,
    DEFAULT_LEARNING_RATE, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::model::{self, DynamicsParams, RegimeRule, VolatilityMode};
use crate::sim::{derive_seed, run_ensemble, Ensemble, DEFAULT_STEPS};
use crate::stats::SdAggregation;

const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;

/// Which of the two ensembles of a repetition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Train => TAG_TRAIN,
            Role::Test => TAG_TEST,
        }
    }
}

/// Dynamics shared by every benchmark count. Weights and fixed volatility
/// factors, when given, must match every configured count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSettings {
    pub c_max: f64,
    pub sigma_base: f64,
    pub mu_gain_min: f64,
    pub mu_gain_max: f64,
    pub sigma_var: f64,
    pub volatility_mode: VolatilityMode,
    pub regime_rule: RegimeRule,
    pub init_min: f64,
    pub init_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_volatility_factors: Option<Vec<f64>>,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        DynamicsSettings {
            c_max: model::DEFAULT_C_MAX,
            sigma_base: model::DEFAULT_SIGMA_BASE,
            mu_gain_min: model::DEFAULT_MU_GAIN_MIN,
            mu_gain_max: model::DEFAULT_MU_GAIN_MAX,
            sigma_var: model::DEFAULT_SIGMA_VAR,
            volatility_mode: VolatilityMode::default(),
            regime_rule: RegimeRule::default(),
            init_min: model::DEFAULT_INIT_MIN,
            init_max: model::DEFAULT_INIT_MAX,
            weights: None,
            agent_volatility_factors: None,
        }
    }
}

impl DynamicsSettings {
    pub fn params_for(&self, n: usize) -> Result<DynamicsParams> {
        let params = DynamicsParams {
            n_benchmarks: n,
            weights: self.weights.clone().unwrap_or_else(|| vec![1.0; n]),
            c_max: self.c_max,
            sigma_base: self.sigma_base,
            mu_gain_min: self.mu_gain_min,
            mu_gain_max: self.mu_gain_max,
            sigma_var: self.sigma_var,
            volatility_mode: self.volatility_mode,
            regime_rule: self.regime_rule,
            agent_volatility_factors: self.agent_volatility_factors.clone(),
            init_range: (self.init_min, self.init_max),
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub burn_in: usize,
    pub window: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            burn_in: DEFAULT_BURN_IN,
            window: DEFAULT_WINDOW,
        }
    }
}

impl DetectorSettings {
    pub fn detector(&self, theta: f64) -> DetectorConfig {
        DetectorConfig {
            theta,
            burn_in: self.burn_in,
            window: self.window,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    /// Number of grid candidates seeding SGD; 0 disables the grid and starts
    /// from `initial_threshold`.
    pub grid_size: usize,
    pub initial_threshold: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            learning_rate: DEFAULT_LEARNING_RATE,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            epsilon: DEFAULT_EPSILON,
            grid_size: DEFAULT_GRID_SIZE,
            initial_threshold: 0.0,
        }
    }
}

impl OptimizerSettings {
    /// Optimizer configuration for a training dataset.
    pub fn config_for(&self, dataset: &DetectionDataset) -> Result<OptimizerConfig> {
        let grid = match self.grid_size {
            0 => None,
            size => Some(grid_candidates(dataset, size)?),
        };
        Ok(OptimizerConfig {
            learning_rate: self.learning_rate,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            epsilon: self.epsilon,
            initial_threshold: self.initial_threshold,
            grid,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark_counts: Vec<usize>,
    pub train_runs: usize,
    pub test_runs: usize,
    pub repetitions: usize,
    pub steps: usize,
    pub master_seed: u64,
    pub sd_aggregation: SdAggregation,
    pub dynamics: DynamicsSettings,
    pub detector: DetectorSettings,
    pub optimizer: OptimizerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark_counts: vec![2, 5, 10, 20],
            train_runs: 100,
            test_runs: 100,
            repetitions: 20,
            steps: DEFAULT_STEPS,
            master_seed: 0,
            sd_aggregation: SdAggregation::default(),
            dynamics: DynamicsSettings::default(),
            detector: DetectorSettings::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks every invariant, reporting the offending key path.
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| Err(Error::validation(key, reason));
        if self.benchmark_counts.is_empty() {
            return fail("benchmark_counts", "must not be empty".into());
        }
        if self.benchmark_counts.contains(&0) {
            return fail("benchmark_counts", "every count must be positive".into());
        }
        for (key, value) in [
            ("train_runs", self.train_runs),
            ("test_runs", self.test_runs),
            ("repetitions", self.repetitions),
            ("steps", self.steps),
            ("detector.window", self.detector.window),
            ("optimizer.max_iterations", self.optimizer.max_iterations),
        ] {
            if value == 0 {
                return fail(key, "must be positive".into());
            }
        }
        if self.optimizer.grid_size == 1 {
            return fail(
                "optimizer.grid_size",
                "must be 0 (disabled) or at least 2".into(),
            );
        }
        for (key, value) in [
            ("optimizer.learning_rate", self.optimizer.learning_rate),
            ("optimizer.tolerance", self.optimizer.tolerance),
            ("optimizer.epsilon", self.optimizer.epsilon),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return fail(key, "must be positive".into());
            }
        }
        for &n in &self.benchmark_counts {
            if let Err(Error::Validation { what, reason }) = self.dynamics.params_for(n) {
                return fail(
                    &format!("dynamics.{what}"),
                    format!("{reason} (benchmark count {n})"),
                );
            }
        }
        Ok(())
    }

    pub fn ensemble_seed(&self, n: usize, repetition: usize, role: Role) -> u64 {
        derive_seed(&[self.master_seed, n as u64, repetition as u64, role.tag()])
    }

    pub fn runs_for(&self, role: Role) -> usize {
        match role {
            Role::Train => self.train_runs,
            Role::Test => self.test_runs,
        }
    }

    /// Regenerates one ensemble of the protocol.
    pub fn ensemble(&self, n: usize, repetition: usize, role: Role) -> Result<Ensemble> {
        let params = self.dynamics.params_for(n)?;
        run_ensemble(
            &params,
            self.runs_for(role),
            self.steps,
            self.ensemble_seed(n, repetition, role),
        )
    }
}

/// Unit-width histogram of detection offsets `detected - tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edges of each bin followed by the right edge of the last.
    pub bin_edges: Vec<i64>,
    pub counts: Vec<usize>,
    pub window_start: i64,
    pub window_end: i64,
    /// Offsets inside `[window_start, window_end]`.
    pub in_window: usize,
    pub total: usize,
}

impl Histogram {
    pub fn count_at(&self, offset: i64) -> usize {
        match self.bin_edges.first() {
            Some(&first) if offset >= first => self
                .counts
                .get((offset - first) as usize)
                .copied()
                .unwrap_or(0),
            _ => 0,
        }
    }
}

pub fn detection_time_histogram(offsets: &[i64], window: usize) -> Result<Histogram> {
    if window == 0 {
        return Err(Error::validation("window", "must be at least 1"));
    }
    let window_end = window as i64;
    let (bin_edges, counts) = match (offsets.iter().min(), offsets.iter().max()) {
        (Some(&lo), Some(&hi)) => {
            let mut counts = vec![0; (hi - lo + 1) as usize];
            for &o in offsets {
                counts[(o - lo) as usize] += 1;
            }
            ((lo..=hi + 1).collect(), counts)
        }
        _ => (Vec::new(), Vec::new()),
    };
    Ok(Histogram {
        bin_edges,
        counts,
        window_start: 0,
        window_end,
        in_window: offsets
            .iter()
            .filter(|&&o| (0..=window_end).contains(&o))
            .count(),
        total: offsets.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub theta_star: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
    /// Runs left out for never reaching criticality.
    pub train_excluded: usize,
    pub test_excluded: usize,
    /// Test runs scored (critical-reaching).
    pub test_scored: usize,
    /// `detected - tau` for every test run with a detection.
    pub detection_offsets: Vec<i64>,
    pub test_undetected: usize,
    pub histogram: Histogram,
}

pub fn run_repetition(
    n: usize,
    config: &ExperimentConfig,
    repetition: usize,
) -> Result<RepetitionOutcome> {
    let train = config.ensemble(n, repetition, Role::Train)?;
    let test = config.ensemble(n, repetition, Role::Test)?;
    let (train_ds, train_excluded) =
        DetectionDataset::from_traces(&train.traces, config.sd_aggregation)?;
    let (test_ds, test_excluded) =
        DetectionDataset::from_traces(&test.traces, config.sd_aggregation)?;
    if train_ds.is_empty() {
        return Err(Error::EmptyAlignment {
            excluded: train_excluded,
        });
    }
    if test_ds.is_empty() {
        return Err(Error::EmptyAlignment {
            excluded: test_excluded,
        });
    }

    let base = config.detector.detector(0.0);
    let opt = sgd_optimize(&train_ds, &base, &config.optimizer.config_for(&train_ds)?)?;
    let detector = config.detector.detector(opt.theta_star);
    let train_accuracy = detection_accuracy(&train_ds, &detector)?;
    let test_accuracy = detection_accuracy(&test_ds, &detector)?;

    let detections: Vec<Option<usize>> = test_ds
        .items
        .iter()
        .map(|item| detect_critical_time(&item.derivatives, &detector))
        .collect();
    let detection_offsets: Vec<i64> = detections
        .iter()
        .zip(&test_ds.items)
        .filter_map(|(d, item)| d.map(|d| d as i64 - item.tau as i64))
        .collect();
    let histogram = detection_time_histogram(&detection_offsets, config.detector.window)?;

    Ok(RepetitionOutcome {
        repetition,
        train_seed: train.base_seed,
        test_seed: test.base_seed,
        theta_star: opt.theta_star,
        train_accuracy,
        test_accuracy,
        optimizer_iterations: opt.iterations,
        optimizer_converged: opt.converged,
        train_excluded,
        test_excluded,
        test_scored: test_ds.len(),
        test_undetected: detections.iter().filter(|d| d.is_none()).count(),
        detection_offsets,
        histogram,
    })
}

/// Mean and population SD; SD is 0 for a single value.
pub fn mean_and_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionFailure {
    pub repetition: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub benchmarks: usize,
    pub train_accuracy: Option<AccuracySummary>,
    pub test_accuracy: Option<AccuracySummary>,
    pub theta_star: Vec<f64>,
    pub repetitions: Vec<RepetitionOutcome>,
    pub failures: Vec<RepetitionFailure>,
}

impl BenchmarkResult {
    fn assemble(benchmarks: usize, outcomes: Vec<Result<RepetitionOutcome>>) -> Self {
        let mut repetitions = Vec::new();
        let mut failures = Vec::new();
        for (repetition, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(o) => repetitions.push(o),
                Err(e) => failures.push(RepetitionFailure {
                    repetition,
                    message: e.to_string(),
                }),
            }
        }
        let summary = |f: fn(&RepetitionOutcome) -> f64| {
            let values: Vec<f64> = repetitions.iter().map(f).collect();
            mean_and_sd(&values).map(|(mean, sd)| AccuracySummary { mean, sd })
        };
        BenchmarkResult {
            benchmarks,
            train_accuracy: summary(|o| o.train_accuracy),
            test_accuracy: summary(|o| o.test_accuracy),
            theta_star: repetitions.iter().map(|o| o.theta_star).collect(),
            repetitions,
            failures,
        }
    }
}

/// Fixed statements about how the numbers in a report were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolNotes {
    pub sd_convention: String,
    pub data_per_repetition: String,
    pub undetected_runs: String,
    pub non_critical_runs: String,
}

impl Default for ProtocolNotes {
    fn default() -> Self {
        ProtocolNotes {
            sd_convention: "population (divisor N); a single repetition reports SD 0".into(),
            data_per_repetition:
                "independent train and test ensembles regenerated for every repetition".into(),
            undetected_runs: "scored as incorrect".into(),
            non_critical_runs: "excluded from datasets and counted per repetition".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub protocol: ProtocolNotes,
    pub results: Vec<BenchmarkResult>,
}

impl EvaluationReport {
    pub fn result_for(&self, benchmarks: usize) -> Option<&BenchmarkResult> {
        self.results.iter().find(|r| r.benchmarks == benchmarks)
    }
}

/// Runs every `(benchmark count, repetition)` pair, in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .benchmark_counts
        .iter()
        .flat_map(|&n| (0..config.repetitions).map(move |r| (n, r)))
        .collect();
    let mut outcomes: Vec<Result<RepetitionOutcome>> = jobs
        .par_iter()
        .map(|&(n, r)| run_repetition(n, config, r))
        .collect();
    let mut results = Vec::with_capacity(config.benchmark_counts.len());
    for &n in config.benchmark_counts.iter().rev() {
        let tail = outcomes.split_off(outcomes.len() - config.repetitions);
        results.push(BenchmarkResult::assemble(n, tail));
    }
    results.reverse();
    Ok(EvaluationReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        protocol: ProtocolNotes::default(),
        results,
    })
}
