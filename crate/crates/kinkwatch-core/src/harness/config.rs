//! Trial configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FiniteDistribution;
use crate::error::{Error, Result};
use crate::model::Dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    Sgd,
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::Config(format!(
                "unknown optimizer {s:?}, expected gd or sgd"
            ))),
        }
    }
}

/// How the step size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum HMode {
    /// `1 / λ_max(H)` of the trial's own data and initialization.
    Auto,
    Fixed(f64),
    /// `c / m`.
    Scaled(f64),
}

impl FromStr for HMode {
    type Err = Error;
    /// Accepts `auto`, a positive float, or `c/m:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "invalid step size {s:?}, expected auto, <float> or c/m:<c>"
            ))
        };
        let positive = |v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        if s == "auto" {
            Ok(HMode::Auto)
        } else if let Some(c) = s.strip_prefix("c/m:") {
            Ok(HMode::Scaled(positive(c.parse().map_err(|_| bad())?)?))
        } else {
            Ok(HMode::Fixed(positive(s.parse().map_err(|_| bad())?)?))
        }
    }
}

impl fmt::Display for HMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HMode::Auto => write!(f, "auto"),
            HMode::Fixed(h) => write!(f, "{h}"),
            HMode::Scaled(c) => write!(f, "c/m:{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: u32,
    pub min_delta: f64,
    /// Steps (GD) or batches (SGD) between validation checks.
    pub check_period: u64,
    /// Validation set size; `None` means the training size n.
    pub validation_size: Option<usize>,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 10,
            min_delta: 1e-8,
            check_period: 1000,
            validation_size: None,
        }
    }
}

pub const DEFAULT_MAX_STEPS_GD: u64 = 200_000;
pub const DEFAULT_MAX_STEPS_SGD: u64 = 1_000_000;
pub const DEFAULT_CERT_PERIOD: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub m: usize,
    /// Training set size; `None` means m².
    pub n: Option<usize>,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub h_mode: HMode,
    pub alpha: f64,
    pub dist_a: Dist,
    pub dist_w: Dist,
    pub distribution: FiniteDistribution,
    pub early_stop: Option<EarlyStopConfig>,
    /// GD steps or SGD batches; `None` picks the optimizer default.
    pub max_steps: Option<u64>,
    pub x_target: f64,
    /// GD steps between certificate attempts.
    pub cert_period: u64,
    pub seed: u64,
}

impl TrialConfig {
    /// Plain GD with auto step size on the uniform distribution over the
    /// six-point example.
    pub fn new(m: usize, seed: u64) -> Self {
        TrialConfig {
            m,
            n: None,
            optimizer: Optimizer::Gd,
            batch_size: 16,
            h_mode: HMode::Auto,
            alpha: 0.0,
            dist_a: Dist::HE,
            dist_w: Dist::HE,
            distribution: FiniteDistribution::example(0.0),
            early_stop: None,
            max_steps: None,
            x_target: 1.0,
            cert_period: DEFAULT_CERT_PERIOD,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(self.m * self.m)
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps.unwrap_or(match self.optimizer {
            Optimizer::Gd => DEFAULT_MAX_STEPS_GD,
            Optimizer::Sgd => DEFAULT_MAX_STEPS_SGD,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.n() == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.cert_period == 0 {
            return Err(Error::Config(
                "certificate period must be at least 1".into(),
            ));
        }
        if !(self.x_target.is_finite() && self.x_target > 0.0) {
            return Err(Error::Config(format!(
                "x_target must be positive, got {}",
                self.x_target
            )));
        }
        if let Some(es) = &self.early_stop {
            if es.check_period == 0 || es.validation_size == Some(0) {
                return Err(Error::Config(
                    "early stopping needs a positive period and validation size".into(),
                ));
            }
        }
        self.dist_a.validate()?;
        self.dist_w.validate()?;
        self.distribution.validate()?;
        crate::model::Hyperparams::new(self.alpha, self.m, 1.0)?;
        Ok(())
    }
}

/// The four optimization and termination strategies compared in the
/// experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gd,
    GdEs,
    SgdEs,
    SgdEsSmallH,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Gd,
        Variant::GdEs,
        Variant::SgdEs,
        Variant::SgdEsSmallH,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Gd => "gd",
            Variant::GdEs => "gd_es",
            Variant::SgdEs => "sgd_es",
            Variant::SgdEsSmallH => "sgd_es_small_h",
        }
    }

    /// Applies the variant's optimizer, early stopping and step size to `cfg`.
    pub fn apply(self, mut cfg: TrialConfig) -> TrialConfig {
        let es = cfg.early_stop.unwrap_or_default();
        match self {
            Variant::Gd => {
                cfg.optimizer = Optimizer::Gd;
                cfg.early_stop = None;
            }
            Variant::GdEs => {
                cfg.optimizer = Optimizer::Gd;
                cfg.early_stop = Some(es);
            }
            Variant::SgdEs => {
                cfg.optimizer = Optimizer::Sgd;
                cfg.early_stop = Some(es);
            }
            Variant::SgdEsSmallH => {
                cfg.optimizer = Optimizer::Sgd;
                cfg.early_stop = Some(es);
                cfg.h_mode = HMode::Scaled(0.01);
            }
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}
