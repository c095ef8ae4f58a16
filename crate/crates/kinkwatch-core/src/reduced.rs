//! Closed low-dimensional description of GD while the activation pattern
//! on the data is frozen.
//!
//! All 4-vectors use the ordering (p_1, p_{-1}, q_1, q_{-1}), where p is a
//! slope and q an intercept of one of the two outer affine pieces. The
//! residual vectors û and u use the matching ordering (r_1, r_{-1}, s_1, s_{-1}).

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RegressionSummary, Sign};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, jacobi_eigen, sym_sqrt, Mat3, Mat4, SymEigen, Vec4};
use crate::model::{forward, phi_prime, Gradient, Hyperparams, Samples, Weights};

/// Signs of the initial first-layer weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub tau: Vec<i8>,
    pos: Vec<usize>,
    neg: Vec<usize>,
}

impl ActivationPattern {
    pub fn members(&self, s: Sign) -> &[usize] {
        match s {
            Sign::Pos => &self.pos,
            Sign::Neg => &self.neg,
        }
    }

    /// Neurons whose initial weight is exactly zero. They belong to neither
    /// group and are ignored by the reduced quantities.
    pub fn zero_count(&self) -> usize {
        self.tau.len() - self.pos.len() - self.neg.len()
    }

    #[inline]
    pub fn sign_of(&self, i: usize) -> Option<Sign> {
        match self.tau[i] {
            1 => Some(Sign::Pos),
            -1 => Some(Sign::Neg),
            _ => None,
        }
    }
}

pub fn activation_pattern(w0: &Weights) -> ActivationPattern {
    let mut p = ActivationPattern {
        tau: Vec::with_capacity(w0.width()),
        pos: Vec::new(),
        neg: Vec::new(),
    };
    for (i, &a) in w0.a.iter().enumerate() {
        let t = if a > 0.0 {
            p.pos.push(i);
            1
        } else if a < 0.0 {
            p.neg.push(i);
            -1
        } else {
            0
        };
        p.tau.push(t);
    }
    p
}

/// True iff every neuron keeps its initial sign pattern on all |x| ≥ x_bound:
/// `|b_i| < (|a_{i,0}| − |a_{i,0} − a_i|) · x_bound`.
pub fn in_region(w: &Weights, w0: &Weights, x_bound: f64) -> bool {
    (0..w.width()).all(|i| w.b[i].abs() < (w0.a[i].abs() - (w0.a[i] - w.a[i]).abs()) * x_bound)
}

/// True iff every neuron has a nonzero initial sign, still has it, and its
/// kink lies strictly inside (−x_bound, x_bound). This is exactly the
/// condition for the activation pattern on all |x| ≥ x_bound to equal the
/// initial one; [`in_region`] implies it.
pub fn pattern_frozen(w: &Weights, tau: &ActivationPattern, x_bound: f64) -> bool {
    (0..w.width()).all(|i| {
        let t = tau.tau[i] as f64;
        t != 0.0 && w.a[i] * t > 0.0 && w.b[i].abs() < w.a[i].abs() * x_bound
    })
}

/// φ'(σ τ_i): the frozen derivative of neuron i on side σ.
#[inline]
fn frozen_slope(tau: i8, side: Sign, alpha: f64) -> f64 {
    match tau {
        0 => 0.0,
        t => phi_prime(side.value() * t as f64, alpha),
    }
}

/// Slope and intercept of each outer piece under the frozen pattern,
/// computed neuron by neuron.
pub fn side_lines(w: &Weights, params: &Hyperparams, tau: &ActivationPattern) -> [(f64, f64); 2] {
    Sign::BOTH.map(|s| {
        let (mut p, mut q) = (0.0, w.c);
        for i in 0..w.width() {
            let d = frozen_slope(tau.tau[i], s, params.alpha);
            p += w.w[i] * d * w.a[i];
            q += w.w[i] * d * w.b[i];
        }
        (p, q)
    })
}

fn frozen_output(lines: &[(f64, f64); 2], w: &Weights, params: &Hyperparams, x: f64) -> f64 {
    match Sign::of(x) {
        Some(s) => lines[s.index()].0 * x + lines[s.index()].1,
        None => forward(w, params, x),
    }
}

/// Least-squares loss with every neuron's derivative frozen per side.
pub fn fixed_pattern_loss<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
    tau: &ActivationPattern,
) -> Result<f64> {
    let n = data.total();
    if n == 0 {
        return Err(Error::Domain("empty dataset".into()));
    }
    let lines = side_lines(w, params, tau);
    let mut s = 0.0;
    for (x, y, k) in data.groups() {
        let e = y - frozen_output(&lines, w, params, x);
        s += k * e * e;
    }
    Ok(s / (2.0 * n as f64))
}

/// Gradient of [`fixed_pattern_loss`].
pub fn fixed_pattern_gradient<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
    tau: &ActivationPattern,
) -> Result<Gradient> {
    let n = data.total();
    if n == 0 {
        return Err(Error::Domain("empty dataset".into()));
    }
    let lines = side_lines(w, params, tau);
    let mut g = Gradient::zeros(w.width());
    for (x, y, k) in data.groups() {
        let e = k * (frozen_output(&lines, w, params, x) - y) / n as f64;
        g.dc += e;
        let Some(s) = Sign::of(x) else { continue };
        for i in 0..w.width() {
            let d = frozen_slope(tau.tau[i], s, params.alpha);
            g.da[i] += e * w.w[i] * d * x;
            g.db[i] += e * w.w[i] * d;
            g.dw[i] += e * d * (w.a[i] * x + w.b[i]);
        }
    }
    Ok(g)
}

/// Per-side Gram matrices Σ_σ = Σ_{i∈I_σ} θ_i θ_iᵀ with θ_i = (a_i, b_i, w_i).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaMoments {
    pub sigma: [Mat3; 2],
}

const IA: usize = 0;
const IB: usize = 1;
const IW: usize = 2;

impl SigmaMoments {
    #[inline]
    pub fn get(&self, s: Sign) -> &Mat3 {
        &self.sigma[s.index()]
    }
    pub fn wa(&self, s: Sign) -> f64 {
        self.get(s)[(IW, IA)]
    }
    pub fn wb(&self, s: Sign) -> f64 {
        self.get(s)[(IW, IB)]
    }
    pub fn ww(&self, s: Sign) -> f64 {
        self.get(s)[(IW, IW)]
    }
    pub fn aa(&self, s: Sign) -> f64 {
        self.get(s)[(IA, IA)]
    }
    pub fn ab(&self, s: Sign) -> f64 {
        self.get(s)[(IA, IB)]
    }
    pub fn bb(&self, s: Sign) -> f64 {
        self.get(s)[(IB, IB)]
    }

    /// Slope and intercept of each outer piece, as a 4-vector.
    pub fn lines(&self, c: f64, alpha: f64) -> Vec4 {
        let (p, n) = (Sign::Pos, Sign::Neg);
        Vec4::new(
            self.wa(p) + alpha * self.wa(n),
            self.wa(n) + alpha * self.wa(p),
            c + self.wb(p) + alpha * self.wb(n),
            c + self.wb(n) + alpha * self.wb(p),
        )
    }
}

pub fn sigma_moments(w: &Weights, tau: &ActivationPattern) -> SigmaMoments {
    let sigma = Sign::BOTH.map(|s| {
        let mut m = Mat3::zeros();
        for &i in tau.members(s) {
            let t = w.theta(i);
            for r in 0..3 {
                for c in 0..3 {
                    m[(r, c)] += t[r] * t[c];
                }
            }
        }
        m
    });
    SigmaMoments { sigma }
}

/// Residual vectors and the deviation from the per-side optimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UVectors {
    pub u_hat: Vec4,
    pub u: Vec4,
    pub v_bar: Vec4,
}

/// Block matrix with blocks [[1, α], [α, 1]] coupling the two sides.
pub fn b_matrix(alpha: f64) -> Mat4 {
    Mat4::new(
        1.0, alpha, 0.0, 0.0, //
        alpha, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, alpha, //
        0.0, 0.0, alpha, 1.0,
    )
}

/// Rank-one coupling through the shared output bias.
pub fn c_matrix() -> Mat4 {
    let mut c = Mat4::zeros();
    for i in 2..4 {
        for j in 2..4 {
            c[(i, j)] = 1.0;
        }
    }
    c
}

/// û = −M v̄ and u = B û, with v̄ read off Σ and c.
pub fn u_vectors(
    sigma: &SigmaMoments,
    c: f64,
    summary: &RegressionSummary,
    alpha: f64,
) -> Result<UVectors> {
    let v_bar = sigma.lines(c, alpha) - summary.v_opt4()?;
    let u_hat = -(summary.m4() * v_bar);
    let u = b_matrix(alpha) * u_hat;
    Ok(UVectors { u_hat, u, v_bar })
}

/// Residual vectors straight from the data, without going through M.
pub fn u_hat_from_residuals(
    w: &Weights,
    params: &Hyperparams,
    data: &Dataset,
    tau: &ActivationPattern,
) -> Result<Vec4> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Domain("empty dataset".into()));
    }
    let lines = side_lines(w, params, tau);
    let mut u = Vec4::zeros();
    for &(x, y) in data.points() {
        let Some(s) = Sign::of(x) else { continue };
        let e = (frozen_output(&lines, w, params, x) - y) / n as f64;
        u[s.index()] -= e * x;
        u[2 + s.index()] -= e;
    }
    Ok(u)
}

/// Places a 2×2 block per side into the 4×4 ordering.
fn place_blocks(blocks: [[[f64; 2]; 2]; 2]) -> Mat4 {
    let mut out = Mat4::zeros();
    for (k, block) in blocks.iter().enumerate() {
        let idx = [k, 2 + k];
        for (r, row) in block.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[(idx[r], idx[c])] = *v;
            }
        }
    }
    out
}

/// The three G contributions: Σ_{w²} I, the (a, b) Gram block, and the
/// (r Σ_{wa} + s Σ_{wb}) I term driven by the current residuals.
pub fn g_parts(sigma: &SigmaMoments, u: &Vec4) -> (Mat4, Mat4, Mat4) {
    let gw = place_blocks(Sign::BOTH.map(|s| [[sigma.ww(s), 0.0], [0.0, sigma.ww(s)]]));
    let gab =
        place_blocks(Sign::BOTH.map(|s| [[sigma.aa(s), sigma.ab(s)], [sigma.ab(s), sigma.bb(s)]]));
    let gwab = place_blocks(Sign::BOTH.map(|s| {
        let k = s.index();
        let g = u[k] * sigma.wa(s) + u[2 + k] * sigma.wb(s);
        [[g, 0.0], [0.0, g]]
    }));
    (gw, gab, gwab)
}

/// A = B (G^w + G^ab + h G^wab) B + C, so that v̄ ← (I − h A M) v̄.
pub fn assemble_a(sigma: &SigmaMoments, u: &Vec4, h: f64, alpha: f64) -> Mat4 {
    let (gw, gab, gwab) = g_parts(sigma, u);
    let b = b_matrix(alpha);
    b * (gw + gab + gwab * h) * b + c_matrix()
}

/// Σ_{+1}, Σ_{-1} and the output bias: everything v̄ depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedState {
    pub sigma: SigmaMoments,
    pub c: f64,
}

impl ReducedState {
    pub fn from_weights(w: &Weights, tau: &ActivationPattern) -> Self {
        ReducedState {
            sigma: sigma_moments(w, tau),
            c: w.c,
        }
    }

    pub fn u_vectors(&self, summary: &RegressionSummary, alpha: f64) -> Result<UVectors> {
        u_vectors(&self.sigma, self.c, summary, alpha)
    }

    pub fn v_bar(&self, summary: &RegressionSummary, alpha: f64) -> Result<Vec4> {
        Ok(self.u_vectors(summary, alpha)?.v_bar)
    }
}

/// Q_σ = [[0, 0, r], [0, 0, s], [r, s, 0]].
pub fn q_matrix(r: f64, s: f64) -> Mat3 {
    Mat3::new(0.0, 0.0, r, 0.0, 0.0, s, r, s, 0.0)
}

/// One GD step expressed on (Σ, c): Σ_σ ← (I + hQ_σ) Σ_σ (I + hQ_σ) and
/// c ← c + h (ŝ_1 + ŝ_{-1}).
pub fn step_reduced(
    state: &ReducedState,
    summary: &RegressionSummary,
    params: &Hyperparams,
) -> Result<ReducedState> {
    let uv = state.u_vectors(summary, params.alpha)?;
    let h = params.h;
    let sigma = Sign::BOTH.map(|s| {
        let k = s.index();
        let t = Mat3::identity() + q_matrix(uv.u[k], uv.u[2 + k]) * h;
        t * state.sigma.sigma[k] * t
    });
    Ok(ReducedState {
        sigma: SigmaMoments { sigma },
        c: state.c + h * (uv.u_hat[2] + uv.u_hat[3]),
    })
}

/// The linearization of the v̄ dynamics around a frozen Σ, its symmetrized
/// form H = M^{1/2} A_ref M^{1/2} and H's spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceOperator {
    pub b: Mat4,
    pub c: Mat4,
    pub m: Mat4,
    pub a_ref: Mat4,
    pub m_sqrt: Mat4,
    pub h_mat: Mat4,
    /// Eigenvalues of H, descending, with eigenvectors as columns.
    pub eigen: SymEigen<4>,
    /// λ_max(M) / λ_min(M).
    pub cond_m: f64,
}

impl ReferenceOperator {
    /// Builds the operator from arbitrary Σ moments.
    pub fn from_moments(
        sigma: &SigmaMoments,
        summary: &RegressionSummary,
        alpha: f64,
    ) -> Result<Self> {
        summary.v_opt()?;
        let m = summary.m4();
        let m_eig = jacobi_eigen(&m)?;
        let (mmax, mmin) = (m_eig.values[0], m_eig.values[3]);
        if mmin <= 0.0 {
            return Err(Error::Singular(
                "moment matrix is not positive definite".into(),
            ));
        }
        let a_ref = assemble_a(sigma, &Vec4::zeros(), 0.0, alpha);
        let m_sqrt = sym_sqrt(&m)?;
        let h_mat = m_sqrt * a_ref * m_sqrt;
        let eigen = jacobi_eigen(&h_mat)?;
        Ok(ReferenceOperator {
            b: b_matrix(alpha),
            c: c_matrix(),
            m,
            a_ref,
            m_sqrt,
            h_mat,
            eigen,
            cond_m: mmax / mmin,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen.values[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigen.values[3]
    }

    /// Largest step size covered by the spectral bounds without overshoot.
    pub fn auto_step(&self) -> f64 {
        1.0 / self.lambda_max()
    }

    /// `I − h A_ref M`.
    pub fn transition(&self, h: f64) -> Mat4 {
        Mat4::identity() - self.a_ref * self.m * h
    }
}

/// The reference operator at a zero-bias initialization.
pub fn reference_operator(
    w0: &Weights,
    summary: &RegressionSummary,
    alpha: f64,
) -> Result<ReferenceOperator> {
    if w0.b.iter().any(|&b| b != 0.0) {
        return Err(Error::Domain(
            "reference operator expects zero initial biases".into(),
        ));
    }
    let tau = activation_pattern(w0);
    ReferenceOperator::from_moments(&sigma_moments(w0, &tau), summary, alpha)
}

/// Closed-form upper bounds on `h Σ_{l≥0} ‖(I − h A_ref M)^l‖_∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumBounds {
    pub s_total: f64,
    pub s_top: f64,
    /// Spectral radius of I − hH.
    pub rho: f64,
}

/// With ρ = max_i |1 − hλ_i(H)| < 1, `‖(I − hA_ref M)^l‖_2 ≤ √cond(M) ρ^l`
/// and `‖·‖_∞ ≤ 2‖·‖_2` on 4×4 matrices, so the sum is at most
/// `2√cond(M) h / (1 − ρ)`. For h ≤ 1/λ_max this is `2√cond(M)/λ_min(H)`.
/// `s_top` is the same bound restricted to the top two eigenvalues.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN ρ must be rejected
pub fn reference_sum_bounds(op: &ReferenceOperator, h: f64) -> Result<SumBounds> {
    let l = &op.eigen.values;
    if l[3] <= 0.0 {
        return Err(Error::Singular(
            "reference operator is not positive definite".into(),
        ));
    }
    let rho = (1.0 - h * l[0]).abs().max((1.0 - h * l[3]).abs());
    if !(rho < 1.0) {
        return Err(Error::Config(format!(
            "step size {h} too large for λ_max(H) = {}",
            l[0]
        )));
    }
    let rho_top = (1.0 - h * l[0]).abs().max((1.0 - h * l[1]).abs());
    let root = op.cond_m.sqrt();
    Ok(SumBounds {
        s_total: 2.0 * root * h / (1.0 - rho),
        s_top: 2.0 * root * h / (1.0 - rho_top),
        rho,
    })
}

/// `‖B M‖_∞`, the factor turning ‖v̄‖_∞ into a bound on ‖u‖_∞.
pub fn bm_norm(op: &ReferenceOperator) -> f64 {
    inf_norm(&(op.b * op.m))
}
