//! Kink tracking and a run-time certificate that no kink will ever reach
//! the data.
//!
//! The certificate argument, applied from the current step k onward:
//!
//! * The comparison system is the linearization frozen at the *current*
//!   moments, `K = I − h A_k^ref M` with `A_k^ref = B(G^w_k + G^ab_k)B + C`.
//!   Its powers satisfy `h Σ_l ‖K^l‖_∞ ≤ S` and `‖K^l‖_∞ ≤ 2√cond(M)`.
//! * If every future transition stays within `δ/(hS)` of `K` (δ < 1), then
//!   `h Σ_{l≥k} ‖v̄_l‖_∞ ≤ S‖v̄_k‖_∞ / (1 − δ)` and
//!   `‖v̄_l‖_∞ ≤ 2√cond(M)‖v̄_k‖_∞ / (1 − δ)`. Hence the remaining residual
//!   mass `h Σ_{l≥k} ‖u_l‖_∞` is at most `tail = ‖BM‖_∞ S ‖v̄_k‖_∞ / (1 − δ)`.
//! * Drift of every θ_i and Σ_σ after step k is bounded by the first-order
//!   plus remainder envelopes evaluated at `tail`, which in turn bound how
//!   far the future transitions can move from `K`. A δ reproducing itself
//!   closes the induction over future steps.
//! * Finally each neuron's drift envelope must keep its kink strictly
//!   inside the target interval, which also keeps the activation pattern on
//!   the data frozen so the reduced dynamics stay exact.

// Negated comparisons below are deliberate: NaN must fail every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};

use crate::data::{RegressionSummary, Sign};
use crate::error::Result;
use crate::linalg::{inf_norm, max_abs, Mat3, Vec4};
use crate::model::{Hyperparams, Weights};
use crate::reduced::{
    activation_pattern, bm_norm, pattern_frozen, reference_sum_bounds, sigma_moments, u_vectors,
    ReferenceOperator,
};

/// Upward rounding applied to every norm entering the certificate.
pub const SAFETY: f64 = 1.0 + 1e-9;
/// Maximum number of fixed-point iterations for the deviation bound.
pub const MAX_FIXED_POINT_ITERS: usize = 50;

/// Kink positions `−b_i / a_i` and whether any reached `±x_bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinkReport {
    pub kinks: Vec<(usize, f64)>,
    /// Neurons with a_i = 0, which have no kink.
    pub flat: Vec<usize>,
    pub crossed: bool,
    pub first_crossing_step: Option<u64>,
}

#[inline]
fn kink_crossed(a: f64, b: f64, x_bound: f64) -> bool {
    // Same as |−b/a| ≥ x_bound without the division.
    a != 0.0 && b.abs() >= x_bound * a.abs()
}

pub fn kinks(w: &Weights, x_bound: f64) -> KinkReport {
    let mut r = KinkReport {
        kinks: Vec::new(),
        flat: Vec::new(),
        crossed: false,
        first_crossing_step: None,
    };
    for i in 0..w.width() {
        if w.a[i] == 0.0 {
            r.flat.push(i);
        } else {
            r.kinks.push((i, -w.b[i] / w.a[i]));
            r.crossed |= kink_crossed(w.a[i], w.b[i], x_bound);
        }
    }
    r
}

/// Allocation-free crossing test with the same boundary rule as [`kinks`].
pub fn any_crossed(w: &Weights, x_bound: f64) -> bool {
    (0..w.width()).any(|i| kink_crossed(w.a[i], w.b[i], x_bound))
}

/// Drift envelope of one neuron: `κ Q̃|θ_0| + 2κ² e^{2κ} ‖θ_0‖_∞ 1`, with
/// `Q̃|θ| = (|w|, |w|, |a| + |b|)`.
pub fn theta_envelope(theta0: [f64; 3], kappa: f64) -> [f64; 3] {
    let [a, b, w] = theta0.map(f64::abs);
    let rest = 2.0 * kappa * kappa * (2.0 * kappa).exp() * a.max(b).max(w);
    [kappa * w + rest, kappa * w + rest, kappa * (a + b) + rest]
}

fn q_tilde() -> Mat3 {
    Mat3::new(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0)
}

/// Entrywise drift envelope of a Gram matrix:
/// `κ(Q̃|Σ_0| + |Σ_0|Q̃) + 8κ² e^{4κ} ‖Σ_0‖_∞ 1_{3×3}`.
pub fn sigma_envelope(sigma0: &Mat3, kappa: f64) -> Mat3 {
    let abs = sigma0.abs();
    let q = q_tilde();
    let rest = 8.0 * kappa * kappa * (4.0 * kappa).exp() * inf_norm(sigma0);
    (q * abs + abs * q) * kappa + Mat3::repeat(rest)
}

/// Running state of the certificate for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateAccumulator {
    pub h: f64,
    pub alpha: f64,
    /// `h Σ_l ‖u_l‖_∞` over the steps taken so far.
    pub kappa_u: f64,
    pub step: u64,
    /// |a_{i,0}|, the margin each kink starts with.
    pub margins: Vec<f64>,
    theta0: Vec<[f64; 3]>,
    /// False once the trajectory has left the fixed-pattern region.
    pub confined: bool,
    /// Diagnostics of the last certification attempt.
    pub delta_hat: f64,
    pub s_total: f64,
    pub s_top: f64,
}

impl CertificateAccumulator {
    pub fn new(w0: &Weights, params: &Hyperparams) -> Self {
        CertificateAccumulator {
            h: params.h,
            alpha: params.alpha,
            kappa_u: 0.0,
            step: 0,
            margins: w0.a.iter().map(|a| a.abs()).collect(),
            theta0: (0..w0.width()).map(|i| w0.theta(i)).collect(),
            confined: true,
            delta_hat: f64::NAN,
            s_total: f64::NAN,
            s_top: f64::NAN,
        }
    }

    /// Envelope of `|θ_{i,k} − θ_{i,0}|` at the current κ.
    pub fn envelope(&self, i: usize) -> [f64; 3] {
        theta_envelope(self.theta0[i], self.kappa_u)
    }

    pub fn width(&self) -> usize {
        self.theta0.len()
    }
}

/// Records the residual vector `u_k` that drove the step just taken.
pub fn update_accumulator(acc: &mut CertificateAccumulator, u_k: &Vec4) {
    acc.kappa_u += acc.h * max_abs(u_k);
    acc.step += 1;
}

/// Residual vector u from the per-side residual moments of the data.
pub fn u_from_residuals(r_hat: [f64; 2], s_hat: [f64; 2], alpha: f64) -> Vec4 {
    Vec4::new(
        r_hat[0] + alpha * r_hat[1],
        r_hat[1] + alpha * r_hat[0],
        s_hat[0] + alpha * s_hat[1],
        s_hat[1] + alpha * s_hat[0],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertifyFailure {
    /// The current weights are already outside the fixed-pattern region.
    OutsideRegion,
    /// The comparison system is singular or does not contract at this h.
    NoContraction,
    /// No self-consistent deviation bound below one was found.
    Inconsistent,
    /// Some neuron's drift envelope reaches the target.
    KinkMargin,
}

/// Outcome of one certification attempt.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub certified: bool,
    pub failure: Option<CertifyFailure>,
    /// Bound on the total κ over the whole (infinite) run.
    pub kappa_hat: f64,
    /// Bound on the remaining residual mass from the current step on.
    pub tail: f64,
    pub delta_hat: f64,
    pub s_total: f64,
}

impl Certificate {
    fn fail(reason: CertifyFailure) -> Self {
        Certificate {
            certified: false,
            failure: Some(reason),
            kappa_hat: f64::INFINITY,
            tail: f64::INFINITY,
            delta_hat: f64::NAN,
            s_total: f64::NAN,
        }
    }
}

/// Tries to prove that continuing GD forever from `w` never moves a kink to
/// `±x_target`. The effective bound is `min(x_target, x̲_D)` since the
/// frozen-pattern dynamics only hold while no kink reaches the data.
///
/// The argument restarts at the current weights and their activation
/// pattern `sign(a_k)`, which may differ from the initial one if a neuron
/// flipped while its kink stayed inside. When `acc.confined` says the
/// pattern never changed, bounds measured from `w0` are used as well.
/// A `true` result is sound up to floating-point rounding; `false` says
/// nothing.
pub fn certify_forever(
    acc: &mut CertificateAccumulator,
    summary: &RegressionSummary,
    w0: &Weights,
    w: &Weights,
    x_target: f64,
) -> Result<Certificate> {
    let x_eff = x_target.min(summary.x_underbar);
    let h = acc.h;
    let alpha = acc.alpha;
    let tau = activation_pattern(w);
    if !(x_eff > 0.0) || !pattern_frozen(w, &tau, x_eff) {
        return Ok(Certificate::fail(CertifyFailure::OutsideRegion));
    }
    let sigma = sigma_moments(w, &tau);
    let v_bar = u_vectors(&sigma, w.c, summary, alpha)?.v_bar;
    let v_norm = max_abs(&v_bar) * SAFETY;

    let mut tail = 0.0;
    let mut delta = 0.0;
    let mut s_total = 0.0;
    if v_norm > 0.0 {
        let Ok(op) = ReferenceOperator::from_moments(&sigma, summary, alpha) else {
            return Ok(Certificate::fail(CertifyFailure::NoContraction));
        };
        let Ok(bounds) = reference_sum_bounds(&op, h) else {
            return Ok(Certificate::fail(CertifyFailure::NoContraction));
        };
        acc.s_total = bounds.s_total;
        acc.s_top = bounds.s_top;
        s_total = bounds.s_total * SAFETY;
        let bm = bm_norm(&op) * SAFETY;
        let b_norm = (1.0 + alpha.abs()) * SAFETY;
        let peak = 2.0 * op.cond_m.sqrt() * SAFETY;

        // Deviation bound δ as a function of a trial δ; iterate upward
        // with slight over-relaxation until it reproduces itself.
        let next_delta = |d: f64| -> (f64, f64) {
            let tail = bm * s_total * v_norm / (1.0 - d);
            let step_u = tail.min(h * bm * peak * v_norm / (1.0 - d));
            let mut worst = 0.0f64;
            for s in Sign::BOTH {
                let cur = sigma.get(s);
                let env = sigma_envelope(cur, tail);
                let (e_aa, e_ab, e_bb, e_ww) = (env[(0, 0)], env[(0, 1)], env[(1, 1)], env[(2, 2)]);
                let wa = cur[(2, 0)].abs() + env[(2, 0)];
                let wb = cur[(2, 1)].abs() + env[(2, 1)];
                let g = step_u * (wa + wb);
                let row_p = e_ww + e_aa + e_ab + g;
                let row_q = e_ab + e_ww + e_bb + g;
                worst = worst.max(row_p).max(row_q);
            }
            (s_total * b_norm * worst * bm * SAFETY, tail)
        };
        let mut consistent = false;
        for _ in 0..MAX_FIXED_POINT_ITERS {
            if !(delta < 1.0) {
                break;
            }
            let (d_new, t) = next_delta(delta);
            if d_new <= delta {
                tail = t;
                consistent = true;
                break;
            }
            delta = d_new * 1.01;
        }
        acc.delta_hat = delta;
        if !consistent || !(delta < 1.0) {
            let mut c = Certificate::fail(CertifyFailure::Inconsistent);
            c.delta_hat = delta;
            c.s_total = s_total;
            return Ok(c);
        }
    }

    let kappa_hat = acc.kappa_u + tail;
    for i in 0..w.width() {
        // Future |b_i| from above and future |a_i| from below, restarted
        // at the current step and, when the whole history stayed frozen,
        // also from initialization. Keeping a_i's sign is implied by a_min > 0.
        let now = theta_envelope(w.theta(i), tail);
        let mut b_max = w.b[i].abs() + now[1];
        let mut a_min = w.a[i].abs() - now[0];
        if acc.confined {
            let from_start = theta_envelope(w0.theta(i), kappa_hat);
            b_max = b_max.min(w0.b[i].abs() + from_start[1]);
            a_min = a_min.max(w0.a[i].abs() - from_start[0]);
        }
        if !(b_max < a_min * x_eff) {
            return Ok(Certificate {
                certified: false,
                failure: Some(CertifyFailure::KinkMargin),
                kappa_hat,
                tail,
                delta_hat: delta,
                s_total,
            });
        }
    }
    Ok(Certificate {
        certified: true,
        failure: None,
        kappa_hat,
        tail,
        delta_hat: delta,
        s_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{regression_summary, Dataset};
    use crate::model::forward;

    #[test]
    fn kink_positions_and_boundary() {
        let w = Weights {
            a: vec![2.0],
            b: vec![-1.0],
            c: 0.0,
            w: vec![1.0],
        };
        let r = kinks(&w, 1.0);
        assert_eq!(r.kinks, vec![(0, 0.5)]);
        assert!(!r.crossed);
        let edge = Weights {
            a: vec![2.0, 1.0],
            b: vec![0.0, -1.0],
            c: 0.0,
            w: vec![1.0, 1.0],
        };
        assert!(kinks(&edge, 1.0).crossed);
        assert!(any_crossed(&edge, 1.0));
        let init = Weights {
            a: vec![0.3, -1.0, 0.0],
            b: vec![0.0; 3],
            c: 0.0,
            w: vec![1.0; 3],
        };
        let r = kinks(&init, 1.0);
        assert!(!r.crossed);
        assert_eq!(r.flat, vec![2]);
    }

    #[test]
    fn zero_residual_leaves_kappa() {
        let w0 = Weights {
            a: vec![1.0],
            b: vec![0.0],
            c: 0.0,
            w: vec![1.0],
        };
        let p = Hyperparams::new(0.0, 1, 0.1).unwrap();
        let mut acc = CertificateAccumulator::new(&w0, &p);
        update_accumulator(&mut acc, &Vec4::zeros());
        assert_eq!(acc.kappa_u, 0.0);
        assert_eq!(acc.step, 1);
    }

    #[test]
    fn envelope_first_order_is_linear() {
        let t = [1.5, 0.0, -0.4];
        let e1 = theta_envelope(t, 1e-9);
        let e2 = theta_envelope(t, 2e-9);
        for k in 0..3 {
            assert!((e2[k] / e1[k] - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn optimum_certifies_immediately() {
        // Targets on y = 0 and a network that is exactly zero on the data:
        // on each side Σ w_i a_i cancels.
        let d = Dataset::new(vec![(1.0, 0.0), (2.0, 0.0), (-1.0, 0.0), (-3.0, 0.0)]).unwrap();
        let summary = regression_summary(&d);
        let w0 = Weights {
            a: vec![1.0, 2.0, -1.0, -0.5],
            b: vec![0.0; 4],
            c: 0.0,
            w: vec![1.0, -0.5, 0.3, -0.6],
        };
        let hp = Hyperparams::new(0.0, 4, 1.0).unwrap();
        assert_eq!(forward(&w0, &hp, 2.0), 0.0);
        assert_eq!(forward(&w0, &hp, -3.0), 0.0);
        let p = Hyperparams::new(0.0, 4, 0.1).unwrap();
        let mut acc = CertificateAccumulator::new(&w0, &p);
        let c = certify_forever(&mut acc, &summary, &w0, &w0, 1.0).unwrap();
        assert!(c.certified, "{c:?}");
        assert_eq!(c.tail, 0.0);
    }

    #[test]
    fn crossed_run_never_certifies() {
        let d = crate::data::example_dataset();
        let summary = regression_summary(&d);
        let w0 = Weights {
            a: vec![1.0, -1.0],
            b: vec![0.0; 2],
            c: 0.0,
            w: vec![0.5, 0.5],
        };
        let mut w = w0.clone();
        w.b[0] = -1.2;
        let p = Hyperparams::new(0.0, 2, 0.1).unwrap();
        let mut acc = CertificateAccumulator::new(&w0, &p);
        let c = certify_forever(&mut acc, &summary, &w0, &w, 1.0).unwrap();
        assert!(!c.certified);
        assert_eq!(c.failure, Some(CertifyFailure::OutsideRegion));
    }
}
