//! Crossing-probability curves, training trajectories and step-size spectra.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{HMode, TrialConfig, Variant};
use super::montecarlo::monte_carlo;
use crate::data::{regression_summary, sample, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    descend, empirical_loss, init_weights, Gradient, Hyperparams, InitSpec, Weights,
};
use crate::reduced::{activation_pattern, reference_operator, sigma_moments, u_vectors};
use crate::rng::{derive_seed, STREAM_DATA, STREAM_INIT};

/// One point of a crossing-probability curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub variant: String,
    pub m: usize,
    pub n: usize,
    pub trials: u64,
    pub crossings: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub max_steps_hits: u64,
}

fn curve(
    label: &str,
    cfgs: impl Iterator<Item = TrialConfig>,
    trials: u64,
    threads: usize,
) -> Result<Vec<CurveRow>> {
    cfgs.map(|cfg| {
        let r = monte_carlo(&cfg, trials, threads)?;
        Ok(CurveRow {
            variant: label.to_string(),
            m: cfg.m,
            n: cfg.n(),
            trials: r.trials,
            crossings: r.crossings,
            p_hat: r.p_hat,
            ci_lo: r.wilson_ci_95.0,
            ci_hi: r.wilson_ci_95.1,
            max_steps_hits: r.max_steps_hits,
        })
    })
    .collect()
}

fn with_width(base: &TrialConfig, m: usize) -> TrialConfig {
    TrialConfig {
        m,
        n: None,
        ..base.clone()
    }
}

/// Crossing probability per width for one optimization strategy, n = m².
pub fn experiment_comparison(
    base: &TrialConfig,
    variant: Variant,
    m_list: &[usize],
    trials: u64,
    threads: usize,
) -> Result<Vec<CurveRow>> {
    curve(
        variant.label(),
        m_list.iter().map(|&m| variant.apply(with_width(base, m))),
        trials,
        threads,
    )
}

/// Crossing probability per width for GD on targets shifted up by `delta`.
pub fn experiment_shift(
    base: &TrialConfig,
    delta: f64,
    m_list: &[usize],
    trials: u64,
    threads: usize,
) -> Result<Vec<CurveRow>> {
    let label = format!("shift_{delta}");
    let cfgs = m_list.iter().map(|&m| {
        let mut c = Variant::Gd.apply(with_width(base, m));
        c.distribution.shift = delta;
        c
    });
    curve(&label, cfgs, trials, threads)
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Steps `⌊1.1^l⌋ − 1` for `l = 0..=levels`, without repeats.
pub fn log_schedule(levels: u32) -> Vec<u64> {
    let mut out: Vec<u64> = (0..=levels)
        .map(|l| 1.1f64.powi(l as i32).floor() as u64 - 1)
        .collect();
    out.dedup();
    out
}

/// Synthetic dataset for trajectory plots: inputs with 1 ≤ |x| ≤ 4 and a
/// wavy conditional mean plus Gaussian noise. Not taken from any source;
/// it only mimics the qualitative look of a 1-d regression problem.
pub fn stand_in_dataset(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).map_err(|e| Error::Internal(e.to_string()))?;
    let points = (0..n)
        .map(|_| {
            let mag: f64 = rng.random_range(1.0..=4.0);
            let x = if rng.random::<bool>() { mag } else { -mag };
            let y = (1.3 * x).sin() + 0.2 * x + noise.sample(&mut rng);
            (x, y)
        })
        .collect();
    Dataset::for_training(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub m: usize,
    pub h: f64,
    pub alpha: f64,
    pub seed: u64,
    /// The schedule runs up to `⌊1.1^levels⌋ − 1`.
    pub levels: u32,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            m: 16,
            h: 0.002,
            alpha: 0.0,
            seed: 0,
            levels: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: u64,
    /// Training loss minus the two-sided affine optimum.
    pub loss_gap: f64,
    /// (p̄_1, p̄_{−1}, q̄_1, q̄_{−1}).
    pub v_bar: [f64; 4],
    /// `½ v̄ᵀ M v̄`, equal to `loss_gap` while the pattern is frozen.
    pub quad_form: f64,
    /// Kink positions; NaN for neurons with a_i = 0.
    pub kinks: Vec<f64>,
    pub in_region: bool,
}

/// Trains one network with GD on `data` and records the logged steps.
pub fn experiment_trajectory(cfg: &TrajectoryConfig, data: &Dataset) -> Result<Vec<TrajectoryRow>> {
    let params = Hyperparams::new(cfg.alpha, cfg.m, cfg.h)?;
    let summary = regression_summary(data);
    let l_opt = summary.best_affine_loss.ok_or_else(|| {
        Error::Singular("trajectory data needs invertible moment matrices on both sides".into())
    })?;
    let w0 = init_weights(&InitSpec::he(cfg.seed), &params)?;
    let tau = activation_pattern(&w0);
    let m4 = summary.m4();
    let grouped = data.grouped();
    let mut w = w0.clone();
    let mut g = Gradient::zeros(cfg.m);
    let mut rows = Vec::new();
    let mut k = 0u64;
    for target in log_schedule(cfg.levels) {
        while k < target {
            descend(&mut w, &params, &grouped, &mut g)?;
            k += 1;
        }
        if w.validate().is_err() {
            return Err(Error::Numerical(format!("non-finite weights at step {k}")));
        }
        let v = u_vectors(&sigma_moments(&w, &tau), w.c, &summary, cfg.alpha)?.v_bar;
        rows.push(TrajectoryRow {
            k,
            loss_gap: empirical_loss(&w, &params, &grouped)? - l_opt,
            v_bar: [v[0], v[1], v[2], v[3]],
            quad_form: 0.5 * v.dot(&(m4 * v)),
            kinks: kink_positions(&w),
            in_region: crate::reduced::in_region(&w, &w0, summary.x_underbar),
        });
    }
    Ok(rows)
}

fn kink_positions(w: &Weights) -> Vec<f64> {
    (0..w.width())
        .map(|i| {
            if w.a[i] == 0.0 {
                f64::NAN
            } else {
                -w.b[i] / w.a[i]
            }
        })
        .collect()
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let m = rows.first().map_or(0, |r| r.kinks.len());
    let mut header: Vec<String> = ["k", "loss_gap", "p1bar", "pm1bar", "q1bar", "qm1bar"]
        .map(String::from)
        .to_vec();
    header.extend((0..m).map(|i| format!("kink_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.k.to_string(), r.loss_gap.to_string()];
        rec.extend(r.v_bar.iter().map(|v| v.to_string()));
        rec.extend(r.kinks.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Spectrum of the symmetrized reference operator for one sampled trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraRow {
    pub seed: u64,
    pub m: usize,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
    pub lambda_4: f64,
    pub inv_lambda_max: f64,
    pub m_times_inv_lambda_max: f64,
    pub cond_m: f64,
}

/// Spectra for trials `0..count` of `cfg`, using the same data and
/// initialization streams as the trial runner. Trials with a singular
/// moment matrix are skipped.
pub fn experiment_spectra(cfg: &TrialConfig, count: u64) -> Result<Vec<SpectraRow>> {
    cfg.validate()?;
    let params = Hyperparams::new(cfg.alpha, cfg.m, 1.0)?;
    let mut rows = Vec::new();
    for i in 0..count {
        let data = sample(
            &cfg.distribution,
            cfg.n(),
            derive_seed(cfg.seed, i, STREAM_DATA),
        )?;
        let spec = InitSpec {
            dist_a: cfg.dist_a,
            dist_w: cfg.dist_w,
            seed: derive_seed(cfg.seed, i, STREAM_INIT),
        };
        let w0 = init_weights(&spec, &params)?;
        let op = match reference_operator(&w0, &regression_summary(&data), cfg.alpha) {
            Ok(op) => op,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        let l = op.eigen.values;
        rows.push(SpectraRow {
            seed: i,
            m: cfg.m,
            lambda_1: l[0],
            lambda_2: l[1],
            lambda_3: l[2],
            lambda_4: l[3],
            inv_lambda_max: 1.0 / l[0],
            m_times_inv_lambda_max: cfg.m as f64 / l[0],
            cond_m: op.cond_m,
        });
    }
    Ok(rows)
}

pub fn write_spectra_csv<W: Write>(rows: &[SpectraRow], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The experiment base configuration: GD, auto step size, six-point
/// example distribution.
pub fn default_base(seed: u64) -> TrialConfig {
    TrialConfig {
        h_mode: HMode::Auto,
        ..TrialConfig::new(16, seed)
    }
}
