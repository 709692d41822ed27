//! Agent dynamics: aggregate complexity, the two performance update rules and
//! the per-step system transition that couples every agent through `C(t)`.
//!
//! The update functions are pure and take their random draws as arguments,
//! so tests can feed them exact values. [`step_system`] owns the draw order:
//! agents are visited in ascending index, and in the pre-critical regime each
//! agent consumes its gain-mean draw before its noise draw.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Critical complexity threshold used in every reported experiment.
pub const DEFAULT_C_MAX: f64 = 0.8;
/// Pre-critical noise standard deviation.
pub const DEFAULT_SIGMA_BASE: f64 = 0.01;
pub const DEFAULT_MU_GAIN_MIN: f64 = 0.0;
pub const DEFAULT_MU_GAIN_MAX: f64 = 0.05;
/// Post-critical noise scale. Never given a value by the source model; chosen
/// so the post-critical regime is clearly separable from pre-critical growth.
pub const DEFAULT_SIGMA_VAR: f64 = 0.34;
pub const DEFAULT_INIT_MIN: f64 = 0.0;
pub const DEFAULT_INIT_MAX: f64 = 0.7;

const WEIGHT_NORMALIZATION_TOL: f64 = 1e-9;

/// How the post-critical volatility multiplier is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilityMode {
    /// `exp(1 + excess_ratio)`, growing with how far `C(t)` exceeds `C_max`.
    #[default]
    Framework,
    /// A constant per-agent factor in `[0, 1]`.
    Experiment,
}

/// When the post-critical update rule applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeRule {
    /// Re-evaluated every step from the current `C(t)`.
    PerStep,
    /// Once `C(t)` has exceeded `C_max` the system stays post-critical.
    #[default]
    Absorbing,
}

/// The update rule applied to every agent during one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PreCritical,
    PostCritical,
}

/// All constants governing agent evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub n_benchmarks: usize,
    pub weights: Vec<f64>,
    pub c_max: f64,
    pub sigma_base: f64,
    pub mu_gain_min: f64,
    pub mu_gain_max: f64,
    pub sigma_var: f64,
    pub volatility_mode: VolatilityMode,
    pub regime_rule: RegimeRule,
    /// Per-agent factors for [`VolatilityMode::Experiment`]. `None` draws a
    /// fresh set uniformly from `[0, 1]` for every run at initialization.
    pub agent_volatility_factors: Option<Vec<f64>>,
    /// Range of the uniform draw for `P_i(0)`.
    pub init_range: (f64, f64),
}

impl DynamicsParams {
    /// Default dynamics for `n` uniformly weighted agents.
    pub fn uniform(n: usize) -> Self {
        DynamicsParams {
            n_benchmarks: n,
            weights: vec![1.0; n],
            c_max: DEFAULT_C_MAX,
            sigma_base: DEFAULT_SIGMA_BASE,
            mu_gain_min: DEFAULT_MU_GAIN_MIN,
            mu_gain_max: DEFAULT_MU_GAIN_MAX,
            sigma_var: DEFAULT_SIGMA_VAR,
            volatility_mode: VolatilityMode::default(),
            regime_rule: RegimeRule::default(),
            agent_volatility_factors: None,
            init_range: (DEFAULT_INIT_MIN, DEFAULT_INIT_MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_benchmarks;
        if n == 0 {
            return Err(Error::validation("n_benchmarks", "must be at least 1"));
        }
        if self.weights.len() != n {
            return Err(Error::validation(
                "weights",
                format!("expected {n} entries, got {}", self.weights.len()),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation(
                "weights",
                "entries must be finite and nonnegative",
            ));
        }
        let mean = self.weights.iter().sum::<f64>() / n as f64;
        if (mean - 1.0).abs() > WEIGHT_NORMALIZATION_TOL {
            return Err(Error::validation(
                "weights",
                format!("mean weight must be 1, got {mean}"),
            ));
        }
        // Values above 1 are allowed: such a system never becomes critical.
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return Err(Error::validation("c_max", "must be positive and finite"));
        }
        if !(self.sigma_base >= 0.0 && self.sigma_base.is_finite()) {
            return Err(Error::validation(
                "sigma_base",
                "must be finite and nonnegative",
            ));
        }
        if !(self.sigma_var >= 0.0 && self.sigma_var.is_finite()) {
            return Err(Error::validation(
                "sigma_var",
                "must be finite and nonnegative",
            ));
        }
        if !(0.0 <= self.mu_gain_min && self.mu_gain_min <= self.mu_gain_max)
            || !self.mu_gain_max.is_finite()
        {
            return Err(Error::validation(
                "mu_gain",
                "require 0 <= mu_gain_min <= mu_gain_max",
            ));
        }
        if let Some(factors) = &self.agent_volatility_factors {
            if factors.len() != n {
                return Err(Error::validation(
                    "agent_volatility_factors",
                    format!("expected {n} entries, got {}", factors.len()),
                ));
            }
            if factors.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation(
                    "agent_volatility_factors",
                    "entries must lie in [0, 1]",
                ));
            }
        }
        let (lo, hi) = self.init_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::validation(
                "init_range",
                "require 0 <= min <= max <= 1",
            ));
        }
        Ok(())
    }
}

/// Snapshot of every agent at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: usize,
    pub performances: Vec<f64>,
    /// Resolved per-agent volatility factors (used in experiment mode).
    pub volatility_factors: Vec<f64>,
    /// Set once any step has run under the post-critical rule.
    pub post_critical: bool,
}

impl SystemState {
    pub fn validate_against(&self, params: &DynamicsParams) -> Result<()> {
        let n = params.n_benchmarks;
        if self.performances.len() != n {
            return Err(Error::validation(
                "state",
                format!("expected {n} performances, got {}", self.performances.len()),
            ));
        }
        if self.volatility_factors.len() != n {
            return Err(Error::validation(
                "state",
                format!(
                    "expected {n} volatility factors, got {}",
                    self.volatility_factors.len()
                ),
            ));
        }
        if self.performances.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation(
                "state",
                "performances must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Weighted mean `(1/n) * sum(w_i * P_i)`.
pub fn aggregate_complexity(performances: &[f64], weights: &[f64]) -> Result<f64> {
    if performances.is_empty() {
        return Err(Error::validation("performances", "must not be empty"));
    }
    if performances.len() != weights.len() {
        return Err(Error::validation(
            "weights",
            format!(
                "length {} does not match {} performances",
                weights.len(),
                performances.len()
            ),
        ));
    }
    let total: f64 = performances.iter().zip(weights).map(|(p, w)| p * w).sum();
    Ok(total / performances.len() as f64)
}

/// `max(0, (c - c_max) / c_max)`.
pub fn excess_complexity_ratio(c: f64, c_max: f64) -> Result<f64> {
    if !(c_max > 0.0) {
        return Err(Error::validation("c_max", "must be positive"));
    }
    Ok(((c - c_max) / c_max).max(0.0))
}

/// `exp(1 + ratio)`; at least `e` for any nonnegative ratio.
pub fn volatility_factor_framework(ratio: f64) -> f64 {
    debug_assert!(ratio >= 0.0);
    (1.0 + ratio).exp()
}

pub fn clamp_unit(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::validation(
            "performance",
            format!("non-finite value {x}"),
        ));
    }
    Ok(x.clamp(0.0, 1.0))
}

fn check_unit(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(
            "performance",
            format!("{p} outside [0, 1]"),
        ))
    }
}

/// Growth with diminishing returns: `clamp(p + gain / (1 + p))`.
pub fn pre_critical_update(p: f64, gain_draw: f64) -> Result<f64> {
    check_unit(p)?;
    clamp_unit(p + gain_draw / (1.0 + p))
}

/// Volatile update: `clamp(p + z * vol_factor * sigma_var)` for a standard
/// normal draw `z`.
pub fn post_critical_update(
    p: f64,
    std_normal_draw: f64,
    vol_factor: f64,
    sigma_var: f64,
) -> Result<f64> {
    check_unit(p)?;
    if !(sigma_var >= 0.0) {
        return Err(Error::validation("sigma_var", "must be nonnegative"));
    }
    if !(vol_factor >= 0.0) {
        return Err(Error::validation(
            "volatility factor",
            "must be nonnegative",
        ));
    }
    clamp_unit(p + std_normal_draw * vol_factor * sigma_var)
}

/// The rule [`step_system`] will apply to `state` next.
pub fn next_regime(state: &SystemState, params: &DynamicsParams) -> Result<Regime> {
    let c = aggregate_complexity(&state.performances, &params.weights)?;
    let latched = params.regime_rule == RegimeRule::Absorbing && state.post_critical;
    Ok(if latched || c > params.c_max {
        Regime::PostCritical
    } else {
        Regime::PreCritical
    })
}

/// Advance every agent by one time step.
pub fn step_system<R: Rng + ?Sized>(
    state: &SystemState,
    params: &DynamicsParams,
    rng: &mut R,
) -> Result<SystemState> {
    state.validate_against(params)?;
    let c = aggregate_complexity(&state.performances, &params.weights)?;
    let regime = next_regime(state, params)?;
    let mut next = Vec::with_capacity(state.performances.len());
    match regime {
        Regime::PreCritical => {
            let span = params.mu_gain_max - params.mu_gain_min;
            for &p in &state.performances {
                let mu = params.mu_gain_min + span * rng.random::<f64>();
                let z: f64 = rng.sample(StandardNormal);
                next.push(pre_critical_update(p, mu + params.sigma_base * z)?);
            }
        }
        Regime::PostCritical => {
            let framework = match params.volatility_mode {
                VolatilityMode::Framework => Some(volatility_factor_framework(
                    excess_complexity_ratio(c, params.c_max)?,
                )),
                VolatilityMode::Experiment => None,
            };
            for (&p, &agent_factor) in state.performances.iter().zip(&state.volatility_factors) {
                let z: f64 = rng.sample(StandardNormal);
                let vol = framework.unwrap_or(agent_factor);
                next.push(post_critical_update(p, z, vol, params.sigma_var)?);
            }
        }
    }
    Ok(SystemState {
        t: state.t + 1,
        performances: next,
        volatility_factors: state.volatility_factors.clone(),
        post_critical: state.post_critical || regime == Regime::PostCritical,
    })
}
