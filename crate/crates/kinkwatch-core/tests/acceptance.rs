//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 5`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinkwatch_core::certify::{any_crossed, theta_envelope, u_from_residuals, update_accumulator};
use kinkwatch_core::data::augment_three_points;
use kinkwatch_core::embedded::{forward_embedded, gd_step_embedded, init_embedded};
use kinkwatch_core::harness::{
    experiment_comparison, experiment_shift, experiment_spectra, run_trial_detailed, Outcome,
    TrialConfig, Variant,
};
use kinkwatch_core::model::{descend, gradient, Gradient};
use kinkwatch_core::reduced::{fixed_pattern_loss, step_reduced};
use kinkwatch_core::{
    activation_pattern, embed, empirical_loss, example_dataset, forward, in_region, init_weights,
    reference_operator, regression_summary, CertificateAccumulator, Dataset, Hyperparams, InitSpec,
    ReducedState, Sign, Weights,
};

const MC_SEED: u64 = 1;
const MC_TRIALS: u64 = 2000;
const MC_TOL: f64 = 0.03;

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = fn() -> Verdict;

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Random training set with 0.5 ≤ |x| < 3, alternating sides.
fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let points = (0..n)
        .map(|j| {
            let mag: f64 = rng.random_range(0.5..3.0);
            // Alternate sides so both always have several distinct inputs.
            let x = if j % 2 == 0 { mag } else { -mag };
            (x, rng.random_range(-2.0..2.0))
        })
        .collect();
    Dataset::for_training(points).unwrap()
}

fn auto_h(w0: &Weights, data: &Dataset, alpha: f64) -> f64 {
    reference_operator(w0, &regression_summary(data), alpha)
        .unwrap()
        .auto_step()
}

fn curve_check(rows: &[kinkwatch_core::harness::CurveRow], expected: &[f64]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (r, &e) in rows.iter().zip(expected) {
        let good = (r.p_hat - e).abs() <= MC_TOL;
        ok &= good;
        parts.push(format!(
            "m={} p_hat={:.4} (target {e}, ci [{:.3}, {:.3}], max_steps_hits={})",
            r.m, r.p_hat, r.ci_lo, r.ci_hi, r.max_steps_hits
        ));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_1() -> Verdict {
    let base = TrialConfig::new(16, MC_SEED);
    let rows = experiment_comparison(&base, Variant::Gd, &[16, 32, 64], MC_TRIALS, 0).unwrap();
    curve_check(&rows, &[0.3611, 0.2501, 0.1824])
}

fn criterion_2() -> Verdict {
    let base = TrialConfig::new(16, MC_SEED);
    let mut rows = experiment_shift(&base, 0.01, &[16], MC_TRIALS, 0).unwrap();
    rows.extend(experiment_shift(&base, 0.1, &[128], MC_TRIALS, 0).unwrap());
    let v = curve_check(&rows, &[0.3605, 0.237]);
    verdict(v.pass, format!("shift 0.01 / 0.1: {}", v.detail))
}

fn criterion_3() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [64usize, 256] {
        let rows = experiment_spectra(&TrialConfig::new(m, MC_SEED), 100).unwrap();
        let mean = rows.iter().map(|r| r.inv_lambda_max).sum::<f64>() / rows.len() as f64;
        let scaled = mean * m as f64;
        ok &= rows.len() == 100 && (0.32..=0.48).contains(&scaled);
        parts.push(format!(
            "m={m}: mean 1/λ_max = {scaled:.4}/m over {} seeds",
            rows.len()
        ));
    }
    verdict(ok, parts.join("; "))
}

/// Full-weight GD against the closed reduced recursion.
fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_step, mut worst_drift) = (0.0f64, 0.0f64);
    let mut compared = 0u64;
    for t in 0..50u64 {
        let m = rng.random_range(2..=128);
        let n = rng.random_range(8..=1024);
        let data = random_dataset(&mut rng, n);
        let summary = regression_summary(&data);
        let alpha = if t % 3 == 0 { 0.2 } else { 0.0 };
        let w0 = init_weights(
            &InitSpec::he(1000 + t),
            &Hyperparams::new(alpha, m, 1.0).unwrap(),
        )
        .unwrap();
        let params = Hyperparams::new(alpha, m, auto_h(&w0, &data, alpha)).unwrap();
        let tau = activation_pattern(&w0);
        let x_min = data.x_underbar();
        let mut w = w0.clone();
        let mut reduced = ReducedState::from_weights(&w0, &tau);
        let scale = reduced
            .v_bar(&summary, alpha)
            .unwrap()
            .amax()
            .max(f64::MIN_POSITIVE);
        let mut g = Gradient::zeros(m);
        for _ in 0..10_000 {
            let before = ReducedState::from_weights(&w, &tau);
            descend(&mut w, &params, &data, &mut g).unwrap();
            if !in_region(&w, &w0, x_min) {
                break;
            }
            let full = ReducedState::from_weights(&w, &tau)
                .v_bar(&summary, alpha)
                .unwrap();
            let one_step = step_reduced(&before, &summary, &params)
                .unwrap()
                .v_bar(&summary, alpha)
                .unwrap();
            reduced = step_reduced(&reduced, &summary, &params).unwrap();
            let drift = reduced.v_bar(&summary, alpha).unwrap() - full;
            worst_step = worst_step.max((one_step - full).amax() / scale);
            worst_drift = worst_drift.max(drift.amax() / scale);
            compared += 1;
        }
    }
    verdict(
        worst_step < 1e-10 && worst_drift < 1e-8 && compared > 0,
        format!("{compared} in-region steps; max per-step rel err {worst_step:.2e}, max drift {worst_drift:.2e}"),
    )
}

/// Analytic gradient against central differences.
fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut configs = 0;
    while configs < 100 {
        let m = rng.random_range(1..=12);
        let n = rng.random_range(2..=20);
        let alpha = [0.0, 0.1, -0.5][configs % 3];
        let data = random_dataset(&mut rng, n);
        let params = Hyperparams::new(alpha, m, 0.1).unwrap();
        let w = Weights {
            a: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
            b: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: rng.random_range(-1.0..1.0),
            w: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let near_kink = data
            .points()
            .iter()
            .any(|&(x, _)| (0..m).any(|i| (w.a[i] * x + w.b[i]).abs() <= 1e-3));
        if near_kink {
            continue;
        }
        configs += 1;
        let g = gradient(&w, &params, &data).unwrap();
        let flat = w.to_flat();
        let gflat = Weights {
            a: g.da.clone(),
            b: g.db.clone(),
            c: g.dc,
            w: g.dw.clone(),
        }
        .to_flat();
        for k in 0..flat.len() {
            let loss_at = |d: f64| {
                let mut p = flat.clone();
                p[k] += d;
                empirical_loss(&Weights::from_flat(&p, m).unwrap(), &params, &data).unwrap()
            };
            let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let rel = (gflat[k] - fd).abs() / gflat[k].abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    verdict(
        worst < 1e-6,
        format!("100 configurations, max relative error {worst:.2e}"),
    )
}

/// Fixed-pattern loss minus the affine optimum against ½ v̄ᵀ M v̄.
fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let schedule = kinkwatch_core::harness::log_schedule(97);
    let mut worst = 0.0f64;
    let mut logged = 0;
    for t in 0..20u64 {
        let m = rng.random_range(2..=64);
        let n = rng.random_range(8..=256);
        let data = random_dataset(&mut rng, n);
        let summary = regression_summary(&data);
        let l_opt = summary.best_affine_loss.unwrap();
        let m4 = summary.m4();
        let alpha = if t % 2 == 0 { 0.0 } else { 0.3 };
        let w0 = init_weights(
            &InitSpec::he(2000 + t),
            &Hyperparams::new(alpha, m, 1.0).unwrap(),
        )
        .unwrap();
        let params = Hyperparams::new(alpha, m, auto_h(&w0, &data, alpha)).unwrap();
        let tau = activation_pattern(&w0);
        let mut w = w0.clone();
        let mut g = Gradient::zeros(m);
        let mut k = 0;
        for &target in &schedule {
            while k < target {
                descend(&mut w, &params, &data, &mut g).unwrap();
                k += 1;
            }
            let v = ReducedState::from_weights(&w, &tau)
                .v_bar(&summary, alpha)
                .unwrap();
            let lhs = fixed_pattern_loss(&w, &params, &data, &tau).unwrap() - l_opt;
            worst = worst.max((lhs - 0.5 * v.dot(&(m4 * v))).abs());
            logged += 1;
        }
    }
    verdict(
        worst < 1e-10,
        format!("{logged} logged steps over 20 runs, max abs deviation {worst:.2e}"),
    )
}

/// Continue certified runs far beyond the certificate and look for crossings.
fn criterion_7() -> Verdict {
    let cfg = TrialConfig::new(16, 7);
    let mut audited = 0;
    let mut crossings = 0;
    let mut index = 0;
    while audited < 500 {
        let run = run_trial_detailed(&cfg, index).unwrap();
        index += 1;
        if run.result.outcome != Outcome::CertifiedNever {
            continue;
        }
        audited += 1;
        let grouped = run.data.grouped();
        let mut w = run.weights.clone();
        let mut g = Gradient::zeros(cfg.m);
        for _ in 0..1_000_000 {
            descend(&mut w, &run.params, &grouped, &mut g).unwrap();
            if any_crossed(&w, cfg.x_target) {
                crossings += 1;
                break;
            }
        }
    }
    verdict(
        crossings == 0,
        format!(
            "{audited} certified runs (of {index} trials) x 1e6 extra steps: {crossings} crossings"
        ),
    )
}

/// Drift envelopes at the running κ against observed parameter drift.
fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0u64;
    let mut checked = 0u64;
    for t in 0..50u64 {
        let m = rng.random_range(2..=64);
        let mut cfg = TrialConfig::new(m, 0);
        cfg.alpha = if t % 4 == 0 { 0.1 } else { 0.0 };
        let data = kinkwatch_core::sample(&cfg.distribution, (m * m).max(100), 3000 + t).unwrap();
        let grouped = data.grouped();
        let w0 = init_weights(
            &InitSpec::he(4000 + t),
            &Hyperparams::new(cfg.alpha, m, 1.0).unwrap(),
        )
        .unwrap();
        let params = Hyperparams::new(cfg.alpha, m, auto_h(&w0, &data, cfg.alpha)).unwrap();
        let mut acc = CertificateAccumulator::new(&w0, &params);
        let mut w = w0.clone();
        let mut g = Gradient::zeros(m);
        for _ in 0..20_000 {
            let res = descend(&mut w, &params, &grouped, &mut g).unwrap();
            update_accumulator(
                &mut acc,
                &u_from_residuals(res.r_hat, res.s_hat, params.alpha),
            );
            if !in_region(&w, &w0, 1.0) {
                break;
            }
            for i in 0..m {
                let env = theta_envelope(w0.theta(i), acc.kappa_u);
                let (now, start) = (w.theta(i), w0.theta(i));
                for c in 0..3 {
                    checked += 1;
                    violations += u64::from((now[c] - start[c]).abs() > env[c]);
                }
            }
        }
    }
    verdict(
        violations == 0,
        format!("{checked} coordinate checks over 50 runs, {violations} violations"),
    )
}

/// d-dimensional training on data along a line against the scalar network.
fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = example_dataset();
    let probes: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
    let mut worst = 0.0f64;
    for d in [2usize, 5] {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let lifted = embed(&data, &z).unwrap();
        let p1 = Hyperparams::new(0.0, 32, 1.0).unwrap();
        let mut wd = init_embedded(&InitSpec::he(90 + d as u64), &p1, d).unwrap();
        let mut w1 = wd.project(&z).unwrap();
        let params = Hyperparams::new(0.0, 32, auto_h(&w1, &data, 0.0)).unwrap();
        let mut g = Gradient::zeros(32);
        for k in 0..=1000 {
            for &x in &probes {
                let xz: Vec<f64> = z.iter().map(|zk| x * zk).collect();
                worst = worst
                    .max((forward_embedded(&wd, &params, &xz) - forward(&w1, &params, x)).abs());
            }
            if k < 1000 {
                gd_step_embedded(&mut wd, &params, &lifted).unwrap();
                descend(&mut w1, &params, &data, &mut g).unwrap();
            }
        }
    }
    verdict(
        worst < 1e-9,
        format!("d in {{2, 5}}, m = 32, 1000 steps: max |Δf| = {worst:.2e}"),
    )
}

fn criterion_10() -> Verdict {
    let s = regression_summary(&example_dataset());
    let statics = s
        .sides
        .iter()
        .all(|side| side.u0 == kinkwatch_core::linalg::Vec2::zeros())
        && s.psi_q == 0.0
        && s.both_invertible();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_psi = 0.0f64;
    let mut all_invertible = true;
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let points = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-5.0..5.0);
                let x = if x.abs() < 1e-3 { 1.0 } else { x };
                // Coarse grid so repeated inputs and one-sided sets occur.
                let x = if rng.random::<bool>() {
                    x.round().max(1.0) * x.signum()
                } else {
                    x
                };
                let x = if rng.random_range(0..4) == 0 {
                    x.abs()
                } else {
                    x
                };
                (x, rng.random_range(-3.0..3.0))
            })
            .collect();
        let aug = augment_three_points(&Dataset::for_training(points).unwrap()).unwrap();
        let sa = regression_summary(&aug);
        worst_psi = worst_psi.max(sa.psi_q);
        all_invertible &= Sign::BOTH
            .iter()
            .all(|&sg| sa.side(sg).m.determinant() > 0.0)
            && sa.both_invertible();
    }
    verdict(
        statics && all_invertible && worst_psi < 1e-10,
        format!("example statics {statics}; 200 augmented sets: invertible {all_invertible}, max ψ_q {worst_psi:.2e}"),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, Check); 10] = [
        (1, "comparison curve, GD", criterion_1),
        (2, "shift curve", criterion_2),
        (3, "step-size constant", criterion_3),
        (4, "reduced dynamics oracle", criterion_4),
        (5, "gradient oracle", criterion_5),
        (6, "loss identity", criterion_6),
        (7, "certificate soundness audit", criterion_7),
        (8, "envelope domination", criterion_8),
        (9, "multi-d equivalence", criterion_9),
        (10, "example statics and augmentation", criterion_10),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} [{tag}] {name}: {} ({:.1}s)",
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
