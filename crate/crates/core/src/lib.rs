//! Simulation of benchmark-agent ensembles that grow toward a critical
//! complexity threshold and turn volatile beyond it, together with a
//! detector that locates the onset of that volatility from the slope of an
//! expanding-window standard deviation.
//!
//! The pipeline, bottom-up:
//!
//! - [`model`]: the per-agent update rules and one system step.
//! - [`sim`]: seeded runs and reproducible ensembles.
//! - [`stats`]: expanding SDs, their derivatives, and aligned ensemble summaries.
//! - [`detect`]: threshold detection, window accuracy and SGD calibration.
//! - [`eval`]: the train/test protocol with repetitions.
//! - [`io`]: configuration, CSV traces, plot data and reports.
//!
//! ```
//! use criticality::model::DynamicsParams;
//! use criticality::sim::run_simulation;
//!
//! let params = DynamicsParams::uniform(5);
//! let trace = run_simulation(&params, 300, 7).unwrap();
//! assert_eq!(trace.len(), 301);
//! assert!(trace.critical_index.is_some());
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
