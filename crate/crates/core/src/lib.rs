//! Ensemble Kalman control of extreme events in Lorenz 96 twin experiments.
//!
//! A nature run is tracked by a stochastic EnKF; after each analysis an
//! extended forecast checks for extreme values, and the ensemble Kalman
//! smoother turns the reference value into a small perturbation that is
//! added to nature and to the analysis ensemble.
//!
//! - [`lorenz96`]: dynamics and RK4 integration
//! - [`ensemble`]: ensemble storage and the localized stochastic EnKF
//! - [`control`]: trigger, control gain, sparsifiers, adaptive inflation
//! - [`harness`]: twin-experiment cycling, metrics, sweeps
//! - [`config`] and [`output`]: config files and CSV emitters

pub mod config;
pub mod control;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod lorenz96;
pub mod output;

pub use control::{ControlProblem, Sparsifier, TriggerRule};
pub use ensemble::{Ensemble, LocalizationConfig, ObservationModel};
pub use error::{Error, Result};
pub use harness::{run_cse, run_uncontrolled, ExperimentConfig, MetricSummary, RunResult};
pub use lorenz96::{ModelConfig, StateVector};
