//! Trial runner, early stopping, Monte Carlo estimation and experiments.

pub mod config;
pub mod early_stop;
pub mod experiments;
pub mod montecarlo;
pub mod trial;

pub use config::{EarlyStopConfig, HMode, Optimizer, TrialConfig, Variant};
pub use early_stop::{early_stop_check, EarlyStopMonitor, EsDecision};
pub use experiments::{
    experiment_comparison, experiment_shift, experiment_spectra, experiment_trajectory,
    log_schedule, stand_in_dataset, CurveRow, SpectraRow, TrajectoryConfig, TrajectoryRow,
};
pub use montecarlo::{monte_carlo, run_trials, wilson_interval, MonteCarloReport};
pub use trial::{run_trial, run_trial_detailed, run_trial_indexed, Outcome, TrialResult, TrialRun};
