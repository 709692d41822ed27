//! Seeded simulation runs and ensembles.
//!
//! Every run owns a private ChaCha8 stream seeded from [`run_seed`], so a
//! trace depends only on `(params, steps, seed)` and ensembles come out the
//! same whether their runs execute sequentially or on a thread pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{aggregate_complexity, step_system, DynamicsParams, SystemState};

/// Default simulation horizon in steps.
pub const DEFAULT_STEPS: usize = 300;

/// One SplitMix64 output step.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a sequence of integers into one seed. Order matters, and extending
/// a prefix never changes the seeds derived from other prefixes.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Seed of run `index` within an ensemble seeded by `base_seed`.
pub fn run_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(&[base_seed, index as u64])
}

/// Full record of one run, including `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub run_id: usize,
    pub seed: u64,
    /// Row `t` holds every agent's performance at time `t`.
    pub performances: Vec<Vec<f64>>,
    pub complexity: Vec<f64>,
    /// First `t` with `complexity[t] > c_max`.
    pub critical_index: Option<usize>,
}

impl SimulationTrace {
    /// Builds a trace from a performance matrix, deriving `C(t)` and the
    /// critical index.
    pub fn from_performances(
        run_id: usize,
        seed: u64,
        performances: Vec<Vec<f64>>,
        weights: &[f64],
        c_max: f64,
    ) -> Result<Self> {
        let complexity = performances
            .iter()
            .map(|row| aggregate_complexity(row, weights))
            .collect::<Result<Vec<_>>>()?;
        let critical_index = find_critical_index(&complexity, c_max)?;
        Ok(SimulationTrace {
            run_id,
            seed,
            performances,
            complexity,
            critical_index,
        })
    }

    /// Number of recorded time points (`steps + 1` for a simulated run).
    pub fn len(&self) -> usize {
        self.performances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.performances.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.performances.first().map_or(0, Vec::len)
    }

    /// Time series of a single agent.
    pub fn agent_series(&self, agent: usize) -> Vec<f64> {
        self.performances.iter().map(|row| row[agent]).collect()
    }
}

/// A batch of independent runs sharing parameters and horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub params: DynamicsParams,
    pub steps: usize,
    pub base_seed: u64,
    /// Indexed by `run_id`.
    pub traces: Vec<SimulationTrace>,
}

impl Ensemble {
    /// Number of runs that never exceeded `c_max`.
    pub fn non_critical_count(&self) -> usize {
        self.traces
            .iter()
            .filter(|t| t.critical_index.is_none())
            .count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Draws `P_i(0)` uniformly from `params.init_range`, then resolves the
/// per-agent volatility factors (drawn from `[0, 1]` unless fixed in params).
pub fn initialize_agents<R: Rng + ?Sized>(params: &DynamicsParams, rng: &mut R) -> SystemState {
    let n = params.n_benchmarks;
    let (lo, hi) = params.init_range;
    let performances = (0..n)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    let drawn: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let volatility_factors = params.agent_volatility_factors.clone().unwrap_or(drawn);
    SystemState {
        t: 0,
        performances,
        volatility_factors,
        post_critical: false,
    }
}

/// Minimal `t` with `complexity[t] > c_max`.
pub fn find_critical_index(complexity: &[f64], c_max: f64) -> Result<Option<usize>> {
    if complexity.is_empty() {
        return Err(Error::validation("complexity series", "must not be empty"));
    }
    Ok(complexity.iter().position(|&c| c > c_max))
}

pub fn run_simulation(params: &DynamicsParams, steps: usize, seed: u64) -> Result<SimulationTrace> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::validation("steps", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = initialize_agents(params, &mut rng);
    let mut performances = Vec::with_capacity(steps + 1);
    performances.push(state.performances.clone());
    for _ in 0..steps {
        state = step_system(&state, params, &mut rng)?;
        performances.push(state.performances.clone());
    }
    SimulationTrace::from_performances(0, seed, performances, &params.weights, params.c_max)
}

pub fn run_ensemble(
    params: &DynamicsParams,
    count: usize,
    steps: usize,
    base_seed: u64,
) -> Result<Ensemble> {
    run_ensemble_with(params, count, steps, base_seed, Execution::default())
}

pub fn run_ensemble_with(
    params: &DynamicsParams,
    count: usize,
    steps: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::validation("run count", "must be at least 1"));
    }
    params.validate()?;
    let run = |k: usize| {
        run_simulation(params, steps, run_seed(base_seed, k))
            .map(|trace| SimulationTrace { run_id: k, ..trace })
    };
    let traces = match execution {
        Execution::Sequential => (0..count).map(run).collect::<Result<Vec<_>>>()?,
        Execution::Parallel => (0..count)
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(Ensemble {
        params: params.clone(),
        steps,
        base_seed,
        traces,
    })
}
