//! Patience-based early stopping on a validation loss.

use serde::{Deserialize, Serialize};

use super::config::EarlyStopConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EsDecision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopMonitor {
    pub best: f64,
    pub stale_checks: u32,
    pub checks: u32,
    patience: u32,
    min_delta: f64,
}

impl EarlyStopMonitor {
    /// `initial` is the validation loss before training starts.
    pub fn new(cfg: &EarlyStopConfig, initial: f64) -> Self {
        EarlyStopMonitor {
            best: initial,
            stale_checks: 0,
            checks: 0,
            patience: cfg.patience,
            min_delta: cfg.min_delta,
        }
    }

    pub fn check(&mut self, val_loss: f64) -> EsDecision {
        self.checks += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stale_checks = 0;
        } else {
            self.stale_checks += 1;
        }
        if self.stale_checks >= self.patience {
            EsDecision::Stop
        } else {
            EsDecision::Continue
        }
    }
}

/// Single-call form: updates `monitor` and reports whether to stop.
pub fn early_stop_check(monitor: &mut EarlyStopMonitor, val_loss: f64) -> EsDecision {
    monitor.check(val_loss)
}
