//! Variability statistics: expanding-window standard deviations, their first
//! differences, and cross-run summaries of ensembles aligned at the critical
//! point.
//!
//! All standard deviations and variances use the population convention
//! (divisor `N`), so a constant series or a single run gives exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Ensemble, SimulationTrace};

/// Which per-run series the expanding standard deviation is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdAggregation {
    /// Mean over agents of each agent's expanding SD.
    #[default]
    AgentMean,
    /// Expanding SD of the aggregate complexity `C(t)`.
    Complexity,
}

/// `S(t)` for consecutive `t` beginning at `start_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdSeries {
    pub values: Vec<f64>,
    pub start_index: usize,
}

/// `S'(t) = S(t) - S(t-1)` for consecutive `t` beginning at `start_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSeries {
    pub values: Vec<f64>,
    pub start_index: usize,
}

impl DerivativeSeries {
    /// Value at absolute time `t`, if defined.
    pub fn get(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.start_index)
            .and_then(|k| self.values.get(k).copied())
    }

    /// `(t, S'(t))` pairs on absolute time.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.start_index + k, v))
    }

    /// One past the last defined absolute index.
    pub fn end_index(&self) -> usize {
        self.start_index + self.values.len()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance; exactly zero for a constant slice.
pub fn population_variance(values: &[f64]) -> f64 {
    let mut acc = Running::default();
    values.iter().for_each(|&x| acc.push(x));
    acc.m2 / acc.count
}

/// Population SD of `series[0..=t]`.
pub fn expanding_sd(series: &[f64], t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::validation(
            "window end",
            "need t >= 1 (at least two points)",
        ));
    }
    if t >= series.len() {
        return Err(Error::validation(
            "window end",
            format!("t = {t} beyond series of length {}", series.len()),
        ));
    }
    Ok(population_variance(&series[..=t]).sqrt())
}

/// Welford accumulator for an expanding window.
#[derive(Clone, Copy, Debug, Default)]
struct Running {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn sd(&self) -> f64 {
        (self.m2 / self.count).max(0.0).sqrt()
    }
}

/// Expanding SD at every `t >= 1` of one series.
fn expanding_sd_all(series: &[f64]) -> Vec<f64> {
    let mut acc = Running::default();
    let mut out = Vec::with_capacity(series.len().saturating_sub(1));
    for (t, &x) in series.iter().enumerate() {
        acc.push(x);
        if t >= 1 {
            out.push(acc.sd());
        }
    }
    out
}

/// Per-run `S(t)` for `t >= 1`.
pub fn system_sd_series(trace: &SimulationTrace, aggregation: SdAggregation) -> Result<SdSeries> {
    if trace.len() < 2 {
        return Err(Error::validation("trace", "need at least two time points"));
    }
    let values = match aggregation {
        SdAggregation::Complexity => expanding_sd_all(&trace.complexity),
        SdAggregation::AgentMean => {
            let n = trace.n_agents();
            let mut accs = vec![Running::default(); n];
            let mut out = Vec::with_capacity(trace.len() - 1);
            for (t, row) in trace.performances.iter().enumerate() {
                for (acc, &p) in accs.iter_mut().zip(row) {
                    acc.push(p);
                }
                if t >= 1 {
                    out.push(accs.iter().map(Running::sd).sum::<f64>() / n as f64);
                }
            }
            out
        }
    };
    Ok(SdSeries {
        values,
        start_index: 1,
    })
}

pub fn sd_derivative(sd: &SdSeries) -> Result<DerivativeSeries> {
    if sd.values.len() < 2 {
        return Err(Error::validation("SD series", "need at least two values"));
    }
    Ok(DerivativeSeries {
        values: sd.values.windows(2).map(|w| w[1] - w[0]).collect(),
        start_index: sd.start_index + 1,
    })
}

/// `S'(t)` of one run.
pub fn derivative_series(
    trace: &SimulationTrace,
    aggregation: SdAggregation,
) -> Result<DerivativeSeries> {
    sd_derivative(&system_sd_series(trace, aggregation)?)
}

/// Cross-agent population variance of `P_i(t)` at every time of one run.
pub fn agent_variance_series(trace: &SimulationTrace) -> Vec<f64> {
    trace
        .performances
        .iter()
        .map(|row| population_variance(row))
        .collect()
}

/// Critical-reaching runs re-indexed so each run's critical index is
/// relative time 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedEnsemble {
    pub traces: Vec<SimulationTrace>,
    /// Runs dropped for never reaching criticality.
    pub excluded: usize,
    /// Every retained run has at least this many steps before its origin.
    pub pre_span: usize,
    /// Every retained run has at least this many steps after its origin.
    pub post_span: usize,
}

impl AlignedEnsemble {
    pub fn relative_times(&self) -> impl Iterator<Item = i64> {
        -(self.pre_span as i64)..=self.post_span as i64
    }

    fn absolute(&self, trace: usize, relative_t: i64) -> Option<usize> {
        let tau = self.traces.get(trace)?.critical_index? as i64;
        usize::try_from(tau + relative_t).ok()
    }

    /// Performance row of `trace` at `relative_t`.
    pub fn performance_row(&self, trace: usize, relative_t: i64) -> Option<&[f64]> {
        let t = self.absolute(trace, relative_t)?;
        self.traces[trace].performances.get(t).map(Vec::as_slice)
    }

    pub fn complexity_at(&self, trace: usize, relative_t: i64) -> Option<f64> {
        let t = self.absolute(trace, relative_t)?;
        self.traces[trace].complexity.get(t).copied()
    }
}

pub fn align_ensemble(ensemble: &Ensemble) -> Result<AlignedEnsemble> {
    align_traces(&ensemble.traces)
}

pub fn align_traces(traces: &[SimulationTrace]) -> Result<AlignedEnsemble> {
    let retained: Vec<SimulationTrace> = traces
        .iter()
        .filter(|t| t.critical_index.is_some())
        .cloned()
        .collect();
    let excluded = traces.len() - retained.len();
    if retained.is_empty() {
        return Err(Error::EmptyAlignment { excluded });
    }
    let spans = retained.iter().map(|t| {
        let tau = t.critical_index.unwrap_or_default();
        (tau, t.len() - 1 - tau)
    });
    let (pre_span, post_span) = spans.fold((usize::MAX, usize::MAX), |(a, b), (pre, post)| {
        (a.min(pre), b.min(post))
    });
    Ok(AlignedEnsemble {
        traces: retained,
        excluded,
        pre_span,
        post_span,
    })
}

/// Cross-run summaries at every relative time of an alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStatistics {
    pub relative_t: Vec<i64>,
    pub complexity_mean: Vec<f64>,
    pub complexity_variance: Vec<f64>,
    /// Mean over runs of the cross-agent variance of `P_i(t)`.
    pub agent_variance_mean: Vec<f64>,
}

pub fn ensemble_statistics(aligned: &AlignedEnsemble) -> Result<EnsembleStatistics> {
    if aligned.traces.is_empty() {
        return Err(Error::EmptyAlignment {
            excluded: aligned.excluded,
        });
    }
    let runs = aligned.traces.len();
    let mut stats = EnsembleStatistics {
        relative_t: Vec::new(),
        complexity_mean: Vec::new(),
        complexity_variance: Vec::new(),
        agent_variance_mean: Vec::new(),
    };
    let mut column = Vec::with_capacity(runs);
    for rel in aligned.relative_times() {
        column.clear();
        let mut agent_var = 0.0;
        for k in 0..runs {
            let c = aligned.complexity_at(k, rel).ok_or_else(|| {
                Error::validation(
                    "alignment",
                    format!("run {k} has no value at relative time {rel}"),
                )
            })?;
            column.push(c);
            agent_var += aligned
                .performance_row(k, rel)
                .map_or(0.0, population_variance);
        }
        stats.relative_t.push(rel);
        stats.complexity_mean.push(mean(&column));
        stats.complexity_variance.push(population_variance(&column));
        stats.agent_variance_mean.push(agent_var / runs as f64);
    }
    Ok(stats)
}

/// Mean `|S'|` just before and just after a run's critical index.
///
/// The pre window covers relative times `[-span, 0)` and the post window
/// `(0, span]`, each clipped to where `S'` is defined. `None` when the run
/// has no critical index or either window is empty.
pub fn variability_shift(
    derivatives: &DerivativeSeries,
    critical_index: Option<usize>,
    span: usize,
) -> Option<(f64, f64)> {
    let tau = critical_index?;
    let window_mean = |range: std::ops::Range<usize>| {
        let vals: Vec<f64> = range
            .filter_map(|t| derivatives.get(t))
            .map(f64::abs)
            .collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    let pre = window_mean(tau.saturating_sub(span)..tau)?;
    let post = window_mean(tau + 1..tau + span + 1)?;
    Some((pre, post))
}
