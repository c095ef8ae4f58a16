//! One training run: sample, initialize, train, and watch the kinks.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HMode, Optimizer, TrialConfig};
use super::early_stop::{EarlyStopMonitor, EsDecision};
use crate::certify::{
    any_crossed, certify_forever, u_from_residuals, update_accumulator, CertificateAccumulator,
};
use crate::data::{regression_summary, sample, Dataset, Grouped, RegressionSummary};
use crate::error::{Error, Result};
use crate::model::{
    descend, empirical_loss, init_weights, Gradient, Hyperparams, InitSpec, Samples, Weights,
};
use crate::reduced::{activation_pattern, pattern_frozen, reference_operator, ActivationPattern};
use crate::rng::{derive_seed, STREAM_DATA, STREAM_INIT, STREAM_SHUFFLE, STREAM_VALIDATION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Crossed,
    /// A certificate proved no kink will ever cross.
    CertifiedNever,
    EarlyStoppedNoCross,
    MaxStepsNoCross,
    /// Auto step size requested but a moment matrix is singular.
    Aborted,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Crossed,
        Outcome::CertifiedNever,
        Outcome::EarlyStoppedNoCross,
        Outcome::MaxStepsNoCross,
        Outcome::Aborted,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Crossed => "crossed",
            Outcome::CertifiedNever => "certified_never",
            Outcome::EarlyStoppedNoCross => "early_stopped_no_cross",
            Outcome::MaxStepsNoCross => "max_steps_no_cross",
            Outcome::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    /// Optimizer steps taken (GD steps or SGD batches).
    pub steps_run: u64,
    pub first_crossing_step: Option<u64>,
    pub certified_at: Option<u64>,
    /// Training loss at the last iterate; NaN for aborted trials.
    pub final_loss: f64,
    pub kappa_u_final: f64,
    pub h: f64,
    pub wall_time: f64,
}

/// Equality ignores the wall-clock time.
impl PartialEq for TrialResult {
    fn eq(&self, o: &Self) -> bool {
        self.outcome == o.outcome
            && self.steps_run == o.steps_run
            && self.first_crossing_step == o.first_crossing_step
            && self.certified_at == o.certified_at
            && self.final_loss.to_bits() == o.final_loss.to_bits()
            && self.kappa_u_final.to_bits() == o.kappa_u_final.to_bits()
            && self.h.to_bits() == o.h.to_bits()
    }
}

/// A finished trial together with the state needed to continue it.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub result: TrialResult,
    pub data: Dataset,
    pub summary: RegressionSummary,
    pub params: Hyperparams,
    pub w0: Weights,
    pub weights: Weights,
}

/// Resolves the step size. `Ok(None)` means auto mode on a singular problem.
pub fn resolve_h(
    mode: HMode,
    m: usize,
    w0: &Weights,
    summary: &RegressionSummary,
    alpha: f64,
) -> Result<Option<f64>> {
    match mode {
        HMode::Fixed(h) => Ok(Some(h)),
        HMode::Scaled(c) => Ok(Some(c / m as f64)),
        HMode::Auto => match reference_operator(w0, summary, alpha) {
            Ok(op) => Ok(Some(op.auto_step())),
            Err(e) if e.is_numerical() => Ok(None),
            Err(e) => Err(e),
        },
    }
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult> {
    run_trial_indexed(cfg, 0)
}

/// Runs trial `index` of a batch sharing `cfg.seed` as base seed.
pub fn run_trial_indexed(cfg: &TrialConfig, index: u64) -> Result<TrialResult> {
    Ok(run_trial_detailed(cfg, index)?.result)
}

pub fn run_trial_detailed(cfg: &TrialConfig, index: u64) -> Result<TrialRun> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = |stream| derive_seed(cfg.seed, index, stream);
    let n = cfg.n();
    let data = sample(&cfg.distribution, n, seed(STREAM_DATA))?;
    if data.points().iter().any(|p| p.0 == 0.0) {
        return Err(Error::Config("training inputs must be nonzero".into()));
    }
    let summary = regression_summary(&data);
    let spec = InitSpec {
        dist_a: cfg.dist_a,
        dist_w: cfg.dist_w,
        seed: seed(STREAM_INIT),
    };
    let provisional = Hyperparams::new(cfg.alpha, cfg.m, 1.0)?;
    let w0 = init_weights(&spec, &provisional)?;

    let Some(h) = resolve_h(cfg.h_mode, cfg.m, &w0, &summary, cfg.alpha)? else {
        let result = TrialResult {
            outcome: Outcome::Aborted,
            steps_run: 0,
            first_crossing_step: None,
            certified_at: None,
            final_loss: f64::NAN,
            kappa_u_final: 0.0,
            h: f64::NAN,
            wall_time: started.elapsed().as_secs_f64(),
        };
        return Ok(TrialRun {
            result,
            data,
            summary,
            params: provisional,
            weights: w0.clone(),
            w0,
        });
    };
    let params = Hyperparams::new(cfg.alpha, cfg.m, h)?;

    let validation = match &cfg.early_stop {
        Some(es) => Some(
            sample(
                &cfg.distribution,
                es.validation_size.unwrap_or(n),
                seed(STREAM_VALIDATION),
            )?
            .grouped(),
        ),
        None => None,
    };
    let mut monitor = match (&cfg.early_stop, &validation) {
        (Some(es), Some(v)) => Some(EarlyStopMonitor::new(es, empirical_loss(&w0, &params, v)?)),
        _ => None,
    };

    let mut run = Runner {
        cfg,
        params,
        summary: &summary,
        w0: &w0,
        tau: activation_pattern(&w0),
        w: w0.clone(),
        acc: CertificateAccumulator::new(&w0, &params),
        scratch: Gradient::zeros(cfg.m),
        validation: validation.as_ref(),
        monitor: monitor.as_mut(),
    };
    let (outcome, steps) = match cfg.optimizer {
        Optimizer::Gd => run.gd(&data.grouped())?,
        Optimizer::Sgd => run.sgd(&data, seed(STREAM_SHUFFLE))?,
    };
    let weights = run.w;
    let kappa = run.acc.kappa_u;
    let result = TrialResult {
        outcome,
        steps_run: steps,
        first_crossing_step: (outcome == Outcome::Crossed).then_some(steps),
        certified_at: (outcome == Outcome::CertifiedNever).then_some(steps),
        final_loss: empirical_loss(&weights, &params, &data)?,
        kappa_u_final: kappa,
        h,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(TrialRun {
        result,
        data,
        summary,
        params,
        w0,
        weights,
    })
}

struct Runner<'a> {
    cfg: &'a TrialConfig,
    params: Hyperparams,
    summary: &'a RegressionSummary,
    w0: &'a Weights,
    tau: ActivationPattern,
    w: Weights,
    acc: CertificateAccumulator,
    scratch: Gradient,
    validation: Option<&'a Grouped>,
    monitor: Option<&'a mut EarlyStopMonitor>,
}

impl Runner<'_> {
    fn x_eff(&self) -> f64 {
        self.cfg.x_target.min(self.summary.x_underbar)
    }

    /// One optimizer step on `batch`; returns true if a kink crossed.
    fn step<S: Samples + ?Sized>(&mut self, batch: &S) -> Result<bool> {
        let res = descend(&mut self.w, &self.params, batch, &mut self.scratch)?;
        update_accumulator(
            &mut self.acc,
            &u_from_residuals(res.r_hat, res.s_hat, self.params.alpha),
        );
        if self.acc.confined && !pattern_frozen(&self.w, &self.tau, self.x_eff()) {
            self.acc.confined = false;
        }
        Ok(any_crossed(&self.w, self.cfg.x_target))
    }

    fn check_finite(&self, k: u64) -> Result<()> {
        if self.w.validate().is_err() {
            return Err(Error::Numerical(format!(
                "non-finite weights at step {k} (h = {})",
                self.params.h
            )));
        }
        Ok(())
    }

    fn early_stop_due(&mut self) -> Result<bool> {
        let (Some(monitor), Some(val)) = (self.monitor.as_deref_mut(), self.validation) else {
            return Ok(false);
        };
        let loss = empirical_loss(&self.w, &self.params, val)?;
        Ok(monitor.check(loss) == EsDecision::Stop)
    }

    fn es_period(&self) -> u64 {
        self.cfg.early_stop.map_or(u64::MAX, |e| e.check_period)
    }

    fn gd(&mut self, data: &Grouped) -> Result<(Outcome, u64)> {
        let max_steps = self.cfg.max_steps();
        let can_certify = self.summary.both_invertible() && self.x_eff() > 0.0;
        let es_period = self.es_period();
        let mut k = 0u64;
        loop {
            if k.is_multiple_of(self.cfg.cert_period) {
                self.check_finite(k)?;
                if can_certify {
                    let cert = certify_forever(
                        &mut self.acc,
                        self.summary,
                        self.w0,
                        &self.w,
                        self.cfg.x_target,
                    )?;
                    if cert.certified {
                        return Ok((Outcome::CertifiedNever, k));
                    }
                }
            }
            if k > 0 && k.is_multiple_of(es_period) && self.early_stop_due()? {
                return Ok((Outcome::EarlyStoppedNoCross, k));
            }
            if k >= max_steps {
                return Ok((Outcome::MaxStepsNoCross, k));
            }
            let crossed = self.step(data)?;
            k += 1;
            if crossed {
                return Ok((Outcome::Crossed, k));
            }
        }
    }

    fn sgd(&mut self, data: &Dataset, shuffle_seed: u64) -> Result<(Outcome, u64)> {
        let max_steps = self.cfg.max_steps();
        let es_period = self.es_period();
        let bs = self.cfg.batch_size;
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut k = 0u64;
        loop {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                if k.is_multiple_of(self.cfg.cert_period) {
                    self.check_finite(k)?;
                }
                if k > 0 && k.is_multiple_of(es_period) && self.early_stop_due()? {
                    return Ok((Outcome::EarlyStoppedNoCross, k));
                }
                if k >= max_steps {
                    return Ok((Outcome::MaxStepsNoCross, k));
                }
                let batch = data.slice(chunk);
                let crossed = self.step(&batch)?;
                k += 1;
                if crossed {
                    return Ok((Outcome::Crossed, k));
                }
            }
        }
    }
}
