//! Threshold-crossing detection of the critical onset, window-based accuracy
//! scoring, and finite-difference SGD calibration of the threshold.
//!
//! The loss is `-accuracy`, which is piecewise constant in the threshold, so
//! the forward-difference gradient is zero almost everywhere. The optimizer
//! follows the literal update rule but starts from the best candidate of a
//! grid over the observed derivative range, and reports the best threshold
//! it evaluated anywhere along the way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimulationTrace;
use crate::stats::{derivative_series, DerivativeSeries, SdAggregation};

pub const DEFAULT_BURN_IN: usize = 2;
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub theta: f64,
    /// Earliest absolute time eligible for detection.
    pub burn_in: usize,
    /// A detection at `d` is correct when `tau <= d <= tau + window`.
    pub window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            theta: 0.0,
            burn_in: DEFAULT_BURN_IN,
            window: DEFAULT_WINDOW,
        }
    }
}

impl DetectorConfig {
    pub fn with_theta(self, theta: f64) -> Self {
        DetectorConfig { theta, ..self }
    }

    /// Whether a detection at `detected` falls inside the window after `tau`.
    pub fn is_hit(&self, detected: Option<usize>, tau: usize) -> bool {
        detected.is_some_and(|d| tau <= d && d <= tau + self.window)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionItem {
    pub derivatives: DerivativeSeries,
    /// Actual critical index of the run.
    pub tau: usize,
}

/// One derivative series and its ground-truth critical index per run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionDataset {
    pub items: Vec<DetectionItem>,
}

impl DetectionDataset {
    pub fn new(items: Vec<DetectionItem>) -> Result<Self> {
        for (k, item) in items.iter().enumerate() {
            if item.tau >= item.derivatives.end_index() {
                return Err(Error::validation(
                    "detection dataset",
                    format!(
                        "item {k}: tau = {} beyond series ending at {}",
                        item.tau,
                        item.derivatives.end_index()
                    ),
                ));
            }
        }
        Ok(DetectionDataset { items })
    }

    /// Builds a dataset from the critical-reaching traces, returning it with
    /// the number of runs skipped for never reaching criticality.
    pub fn from_traces(
        traces: &[SimulationTrace],
        aggregation: SdAggregation,
    ) -> Result<(Self, usize)> {
        let mut items = Vec::with_capacity(traces.len());
        let mut skipped = 0;
        for trace in traces {
            match trace.critical_index {
                Some(tau) => items.push(DetectionItem {
                    derivatives: derivative_series(trace, aggregation)?,
                    tau,
                }),
                None => skipped += 1,
            }
        }
        Ok((DetectionDataset::new(items)?, skipped))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.items.is_empty() {
            Err(Error::validation("detection dataset", "must not be empty"))
        } else {
            Ok(())
        }
    }
}

/// First absolute `t >= burn_in` with `S'(t) > theta`.
pub fn detect_critical_time(
    derivatives: &DerivativeSeries,
    config: &DetectorConfig,
) -> Option<usize> {
    derivatives
        .indexed()
        .find(|&(t, v)| t >= config.burn_in && v > config.theta)
        .map(|(t, _)| t)
}

fn fraction(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

/// Fraction of runs detected inside `[tau, tau + window]`. Runs without a
/// detection count as misses.
pub fn detection_accuracy(dataset: &DetectionDataset, config: &DetectorConfig) -> Result<f64> {
    dataset.ensure_nonempty()?;
    let hits = dataset
        .items
        .iter()
        .filter(|item| config.is_hit(detect_critical_time(&item.derivatives, config), item.tau))
        .count();
    Ok(fraction(hits, dataset.len()))
}

pub fn loss(dataset: &DetectionDataset, config: &DetectorConfig, theta: f64) -> Result<f64> {
    Ok(-detection_accuracy(dataset, &config.with_theta(theta))?)
}

/// Forward difference `(loss(theta + eps) - loss(theta)) / eps`.
pub fn estimate_gradient(
    dataset: &DetectionDataset,
    config: &DetectorConfig,
    theta: f64,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let here = loss(dataset, config, theta)?;
    let ahead = loss(dataset, config, theta + epsilon)?;
    Ok((ahead - here) / epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("epsilon", "must be positive"))
    }
}

/// `count` evenly spaced thresholds spanning every derivative value in the
/// dataset; a single candidate when all values coincide.
pub fn grid_candidates(dataset: &DetectionDataset, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::validation("grid size", "must be at least 2"));
    }
    dataset.ensure_nonempty()?;
    let values = dataset
        .items
        .iter()
        .flat_map(|i| i.derivatives.values.iter().copied());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return Err(Error::validation(
            "detection dataset",
            "contains no derivative values",
        ));
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|k| {
            if k == count - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / last
            }
        })
        .collect())
}

/// Scores thresholds in `O(log T)` per run.
///
/// For each run it keeps the times at which the running maximum of `S'`
/// (from `burn_in` on) sets a new record. The first crossing of `theta` is
/// the first record strictly above `theta`, so scoring agrees exactly with
/// [`detection_accuracy`].
#[derive(Clone, Debug)]
pub struct ThresholdScorer {
    window: usize,
    runs: Vec<RunRecords>,
}

#[derive(Clone, Debug)]
struct RunRecords {
    tau: usize,
    times: Vec<usize>,
    maxima: Vec<f64>,
}

impl ThresholdScorer {
    pub fn new(dataset: &DetectionDataset, config: &DetectorConfig) -> Result<Self> {
        dataset.ensure_nonempty()?;
        let runs = dataset
            .items
            .iter()
            .map(|item| {
                let mut times = Vec::new();
                let mut maxima: Vec<f64> = Vec::new();
                for (t, v) in item
                    .derivatives
                    .indexed()
                    .filter(|&(t, _)| t >= config.burn_in)
                {
                    if maxima.last().map_or(true, |&m| v > m) {
                        times.push(t);
                        maxima.push(v);
                    }
                }
                RunRecords {
                    tau: item.tau,
                    times,
                    maxima,
                }
            })
            .collect();
        Ok(ThresholdScorer {
            window: config.window,
            runs,
        })
    }

    pub fn detect(&self, run: usize, theta: f64) -> Option<usize> {
        let r = &self.runs[run];
        let k = r.maxima.partition_point(|&m| !(m > theta));
        r.times.get(k).copied()
    }

    pub fn accuracy(&self, theta: f64) -> f64 {
        let hits = (0..self.runs.len())
            .filter(|&k| {
                let tau = self.runs[k].tau;
                self.detect(k, theta)
                    .is_some_and(|d| tau <= d && d <= tau + self.window)
            })
            .count();
        fraction(hits, self.runs.len())
    }

    pub fn loss(&self, theta: f64) -> f64 {
        -self.accuracy(theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    /// Starting threshold when no grid is given.
    pub initial_threshold: f64,
    /// Candidate starting thresholds; the lowest-loss one seeds SGD.
    pub grid: Option<Vec<f64>>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            epsilon: DEFAULT_EPSILON,
            initial_threshold: 0.0,
            grid: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::validation("tolerance", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations", "must be at least 1"));
        }
        if self.grid.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::validation("grid", "must not be empty when given"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub theta_star: f64,
    pub initial_theta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_accuracy: f64,
    /// `(theta, loss)` at every SGD iterate.
    pub trajectory: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct Best {
    theta: f64,
    loss: f64,
}

impl Best {
    fn offer(&mut self, theta: f64, loss: f64) {
        if loss < self.loss || (loss == self.loss && theta < self.theta) {
            *self = Best { theta, loss };
        }
    }
}

/// Calibrates the detection threshold on `dataset`.
///
/// Iterates `theta <- theta - learning_rate * gradient` until a step moves
/// less than `tolerance` or `max_iterations` is reached. `theta_star` is the
/// lowest-loss threshold among the grid candidates and SGD iterates, with
/// ties going to the smaller threshold.
pub fn sgd_optimize(
    dataset: &DetectionDataset,
    detector: &DetectorConfig,
    config: &OptimizerConfig,
) -> Result<OptimizerResult> {
    config.validate()?;
    let scorer = ThresholdScorer::new(dataset, detector)?;
    let mut best = Best {
        theta: f64::INFINITY,
        loss: f64::INFINITY,
    };
    let mut theta = match &config.grid {
        Some(grid) => {
            for &candidate in grid {
                best.offer(candidate, scorer.loss(candidate));
            }
            best.theta
        }
        None => config.initial_threshold,
    };
    let initial_theta = theta;

    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=config.max_iterations {
        iterations = iteration;
        let here = scorer.loss(theta);
        trajectory.push((theta, here));
        best.offer(theta, here);
        let gradient = (scorer.loss(theta + config.epsilon) - here) / config.epsilon;
        let next = theta - config.learning_rate * gradient;
        if (next - theta).abs() < config.tolerance {
            converged = true;
            break;
        }
        theta = next;
    }
    if !converged {
        best.offer(theta, scorer.loss(theta));
    }

    Ok(OptimizerResult {
        theta_star: best.theta,
        initial_theta,
        iterations,
        converged,
        final_accuracy: scorer.accuracy(best.theta),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series(values: Vec<f64>, start_index: usize) -> DerivativeSeries {
        DerivativeSeries {
            values,
            start_index,
        }
    }

    fn item(values: Vec<f64>, tau: usize) -> DetectionItem {
        DetectionItem {
            derivatives: series(values, 2),
            tau,
        }
    }

    /// A run whose derivative is 0.001 everywhere except `spike` at `at`.
    fn spike_run(len: usize, at: usize, spike: f64, tau: usize) -> DetectionItem {
        let values = (2..len + 2)
            .map(|t| if t == at { spike } else { 0.001 })
            .collect();
        item(values, tau)
    }

    #[test]
    fn detection_examples() {
        let d = series(vec![0.001, 0.002, 0.020, 0.001], 2);
        let cfg = DetectorConfig {
            theta: 0.01,
            burn_in: 2,
            window: 10,
        };
        assert_eq!(detect_critical_time(&d, &cfg), Some(4));
        assert_eq!(detect_critical_time(&d, &cfg.with_theta(0.5)), None);
        assert_eq!(detect_critical_time(&d, &cfg.with_theta(-1.0)), Some(2));
        // burn-in later than the series start
        let late = DetectorConfig {
            burn_in: 5,
            ..cfg.with_theta(-1.0)
        };
        assert_eq!(detect_critical_time(&d, &late), Some(5));
    }

    #[test]
    fn accuracy_examples() {
        let cfg = DetectorConfig {
            theta: 0.01,
            burn_in: 2,
            window: 10,
        };
        // detections at 10, 12 and 25 against tau = 10
        let ds = DetectionDataset::new(vec![
            spike_run(40, 10, 0.5, 10),
            spike_run(40, 12, 0.5, 10),
            spike_run(40, 25, 0.5, 10),
        ])
        .unwrap();
        assert_abs_diff_eq!(detection_accuracy(&ds, &cfg).unwrap(), 2.0 / 3.0);
        assert_abs_diff_eq!(loss(&ds, &cfg, 0.01).unwrap(), -2.0 / 3.0);

        let perfect =
            DetectionDataset::new(vec![spike_run(40, 7, 0.5, 7), spike_run(40, 20, 0.5, 20)])
                .unwrap();
        assert_eq!(detection_accuracy(&perfect, &cfg).unwrap(), 1.0);
        assert_eq!(loss(&perfect, &cfg, 0.01).unwrap(), -1.0);

        assert_eq!(
            detection_accuracy(&perfect, &cfg.with_theta(1.0)).unwrap(),
            0.0
        );
        assert_eq!(loss(&perfect, &cfg, 1.0).unwrap(), 0.0);

        assert!(detection_accuracy(&DetectionDataset::default(), &cfg).is_err());
    }

    #[test]
    fn window_boundaries() {
        let cfg = DetectorConfig::default();
        assert!(cfg.is_hit(Some(10), 10));
        assert!(cfg.is_hit(Some(20), 10));
        assert!(!cfg.is_hit(Some(21), 10));
        assert!(!cfg.is_hit(Some(9), 10));
        assert!(!cfg.is_hit(None, 10));
    }

    #[test]
    fn dataset_rejects_tau_outside_series() {
        assert!(DetectionDataset::new(vec![item(vec![0.0; 3], 5)]).is_err());
        assert!(DetectionDataset::new(vec![item(vec![0.0; 3], 4)]).is_ok());
    }

    #[test]
    fn gradient_examples() {
        let cfg = DetectorConfig::default();
        let ds = DetectionDataset::new(vec![spike_run(40, 12, 0.5, 10)]).unwrap();
        assert_eq!(estimate_gradient(&ds, &cfg, 0.1, 1e-4).unwrap(), 0.0);
        assert!(estimate_gradient(&ds, &cfg, 0.1, 0.0).is_err());
        assert!(estimate_gradient(&ds, &cfg, 0.1, -1e-4).is_err());

        // loss -0.8 at theta and -0.9 at theta + eps: build 10 runs where 8
        // hit at theta = 0.05 and a ninth starts hitting just above it.
        let mut items: Vec<DetectionItem> = (0..8).map(|_| spike_run(40, 12, 0.5, 10)).collect();
        // a run falsely detected early at 0.05 (spike 0.05005 at t=3) that
        // hits correctly once theta clears the early spike
        let mut values: Vec<f64> = (2..42).map(|t| if t == 12 { 0.5 } else { 0.001 }).collect();
        values[1] = 0.050_05;
        items.push(item(values, 10));
        items.push(spike_run(40, 30, 0.5, 10));
        let ds = DetectionDataset::new(items).unwrap();
        assert_abs_diff_eq!(loss(&ds, &cfg, 0.05).unwrap(), -0.8);
        assert_abs_diff_eq!(loss(&ds, &cfg, 0.05 + 1e-4).unwrap(), -0.9);
        assert_abs_diff_eq!(
            estimate_gradient(&ds, &cfg, 0.05, 1e-4).unwrap(),
            -1000.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn grid_examples() {
        let ds = DetectionDataset::new(vec![item(vec![0.0, 0.03, 0.1], 3)]).unwrap();
        let g = grid_candidates(&ds, 3).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[1], 0.05);
        assert_eq!(g[2], 0.1);
        assert_eq!(grid_candidates(&ds, 2).unwrap(), vec![0.0, 0.1]);
        let flat = DetectionDataset::new(vec![item(vec![0.02; 4], 3)]).unwrap();
        assert_eq!(grid_candidates(&flat, 5).unwrap(), vec![0.02]);
        assert!(grid_candidates(&ds, 1).is_err());
    }

    #[test]
    fn flat_loss_converges_immediately() {
        let ds = DetectionDataset::new(vec![spike_run(40, 12, 0.5, 10)]).unwrap();
        let opt = OptimizerConfig {
            initial_threshold: 0.2,
            ..OptimizerConfig::default()
        };
        let r = sgd_optimize(&ds, &DetectorConfig::default(), &opt).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert_eq!(r.theta_star, 0.2);
        assert_eq!(r.final_accuracy, 1.0);
    }

    #[test]
    fn small_step_counts_as_converged() {
        // gradient -1000 at theta = 0.05 gives |step| = 1e-2 < tolerance
        let mut values: Vec<f64> = (2..42).map(|t| if t == 12 { 0.5 } else { 0.001 }).collect();
        values[1] = 0.050_05;
        let ds = DetectionDataset::new(vec![
            item(values, 10),
            spike_run(40, 12, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
            spike_run(40, 30, 0.5, 10),
        ])
        .unwrap();
        let opt = OptimizerConfig {
            initial_threshold: 0.05,
            tolerance: 0.02,
            learning_rate: 1e-5,
            ..OptimizerConfig::default()
        };
        let r = sgd_optimize(&ds, &DetectorConfig::default(), &opt).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn sgd_moves_across_a_step() {
        // The first iterate sees a loss drop of 0.1 within epsilon, a
        // gradient of -1000, and moves up by learning_rate * 1000 = 1e-2.
        let mut values: Vec<f64> = (2..42).map(|t| if t == 12 { 0.5 } else { 0.001 }).collect();
        values[1] = 0.050_05;
        let mut items = vec![item(values, 10)];
        items.extend((0..9).map(|_| spike_run(40, 30, 0.5, 10)));
        let ds = DetectionDataset::new(items).unwrap();
        let r = sgd_optimize(
            &ds,
            &DetectorConfig::default(),
            &OptimizerConfig {
                initial_threshold: 0.05,
                ..OptimizerConfig::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 2);
        assert_abs_diff_eq!(r.trajectory[1].0, 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(r.final_accuracy, 0.1);
        assert!(r.theta_star > 0.050_05);
    }

    #[test]
    fn grid_start_beats_every_candidate() {
        let ds = DetectionDataset::new(vec![
            spike_run(40, 12, 0.3, 10),
            spike_run(40, 15, 0.2, 10),
            spike_run(40, 5, 0.25, 10),
            spike_run(40, 35, 0.4, 10),
        ])
        .unwrap();
        let cfg = DetectorConfig::default();
        let grid = grid_candidates(&ds, 101).unwrap();
        let best_grid = grid
            .iter()
            .map(|&th| detection_accuracy(&ds, &cfg.with_theta(th)).unwrap())
            .fold(0.0, f64::max);
        let r = sgd_optimize(
            &ds,
            &cfg,
            &OptimizerConfig {
                grid: Some(grid),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.final_accuracy >= best_grid);
        assert_eq!(r.final_accuracy, 0.5);
        assert_eq!(
            r.final_accuracy,
            detection_accuracy(&ds, &cfg.with_theta(r.theta_star)).unwrap()
        );
    }

    #[test]
    fn ties_prefer_smaller_threshold() {
        let ds = DetectionDataset::new(vec![spike_run(40, 12, 0.5, 10)]).unwrap();
        let opt = OptimizerConfig {
            grid: Some(vec![0.3, 0.1, 0.2]),
            ..Default::default()
        };
        let r = sgd_optimize(&ds, &DetectorConfig::default(), &opt).unwrap();
        assert_eq!(r.theta_star, 0.1);
    }

    #[test]
    fn invalid_optimizer_configs() {
        let ds = DetectionDataset::new(vec![spike_run(40, 12, 0.5, 10)]).unwrap();
        let cfg = DetectorConfig::default();
        for bad in [
            OptimizerConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                max_iterations: 0,
                ..Default::default()
            },
            OptimizerConfig {
                grid: Some(vec![]),
                ..Default::default()
            },
        ] {
            assert!(sgd_optimize(&ds, &cfg, &bad).is_err());
        }
    }

    fn arb_dataset() -> impl Strategy<Value = DetectionDataset> {
        prop::collection::vec(
            (prop::collection::vec(-0.05f64..0.05, 3..40), 0usize..40),
            1..=10,
        )
        .prop_map(|runs| {
            let items = runs
                .into_iter()
                .map(|(values, tau)| {
                    let end = 2 + values.len();
                    item(values, tau % end)
                })
                .collect();
            DetectionDataset::new(items).unwrap()
        })
    }

    proptest! {
        #[test]
        fn scorer_matches_direct_scan(ds in arb_dataset(), theta in -0.06f64..0.06, burn_in in 0usize..6) {
            let cfg = DetectorConfig { theta, burn_in, window: 10 };
            let scorer = ThresholdScorer::new(&ds, &cfg).unwrap();
            prop_assert_eq!(scorer.accuracy(theta), detection_accuracy(&ds, &cfg).unwrap());
            for (k, item) in ds.items.iter().enumerate() {
                prop_assert_eq!(scorer.detect(k, theta), detect_critical_time(&item.derivatives, &cfg));
            }
        }

        #[test]
        fn raising_theta_never_detects_earlier(ds in arb_dataset(), a in -0.06f64..0.06, b in -0.06f64..0.06) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let cfg = DetectorConfig::default();
            for item in &ds.items {
                let early = detect_critical_time(&item.derivatives, &cfg.with_theta(lo));
                let late = detect_critical_time(&item.derivatives, &cfg.with_theta(hi));
                if let Some(l) = late {
                    prop_assert!(early.is_some_and(|e| e <= l));
                }
            }
        }

        #[test]
        fn optimizer_terminates_and_beats_grid(ds in arb_dataset()) {
            let cfg = DetectorConfig::default();
            let grid = grid_candidates(&ds, 21).unwrap();
            let opt = OptimizerConfig { grid: Some(grid.clone()), max_iterations: 50, ..Default::default() };
            let r = sgd_optimize(&ds, &cfg, &opt).unwrap();
            prop_assert!(r.iterations <= 50);
            prop_assert!((0.0..=1.0).contains(&r.final_accuracy));
            for th in grid {
                prop_assert!(r.final_accuracy >= detection_accuracy(&ds, &cfg.with_theta(th)).unwrap());
            }
        }
    }
}
