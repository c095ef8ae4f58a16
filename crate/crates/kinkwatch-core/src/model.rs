//! Two-layer (leaky) ReLU network `f(x) = c + Σ w_i φ(a_i x + b_i)` with its
//! least-squares loss, exact gradient and the GD / SGD update rules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Sign;
use crate::error::{Error, Result};

/// Slope α of the negative branch, width m and step size h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub m: usize,
    pub h: f64,
}

impl Hyperparams {
    pub fn new(alpha: f64, m: usize, h: f64) -> Result<Self> {
        let p = Hyperparams { alpha, m, h };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha == 1.0 || self.alpha == -1.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and not ±1, got {}",
                self.alpha
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("width m must be at least 1".into()));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }

    pub fn with_h(self, h: f64) -> Self {
        Hyperparams { h, ..self }
    }
}

/// Leaky ReLU.
#[inline]
pub fn phi(t: f64, alpha: f64) -> f64 {
    t * phi_prime(t, alpha)
}

/// Derivative of [`phi`], taking the right branch at zero.
///
/// Written without a branch: pre-activation signs are close to random, so
/// a branch here mispredicts about half the time in the training loop.
#[inline]
pub fn phi_prime(t: f64, alpha: f64) -> f64 {
    [alpha, 1.0][usize::from(t >= 0.0)]
}

/// Full parameter vector of an m-neuron network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub w: Vec<f64>,
}

impl Weights {
    pub fn zeros(m: usize) -> Self {
        Weights {
            a: vec![0.0; m],
            b: vec![0.0; m],
            c: 0.0,
            w: vec![0.0; m],
        }
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a.len();
        if self.b.len() != m || self.w.len() != m {
            return Err(Error::Domain("weight arrays differ in length".into()));
        }
        let finite = self
            .a
            .iter()
            .chain(&self.b)
            .chain(&self.w)
            .all(|v| v.is_finite());
        if !finite || !self.c.is_finite() {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        Ok(())
    }

    /// Per-neuron triple θ_i = (a_i, b_i, w_i).
    #[inline]
    pub fn theta(&self, i: usize) -> [f64; 3] {
        [self.a[i], self.b[i], self.w[i]]
    }

    pub fn max_abs_diff(&self, other: &Weights) -> f64 {
        let mut d = (self.c - other.c).abs();
        for i in 0..self.width() {
            d = d
                .max((self.a[i] - other.a[i]).abs())
                .max((self.b[i] - other.b[i]).abs())
                .max((self.w[i] - other.w[i]).abs());
        }
        d
    }

    /// Flattened as (a, b, c, w).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.width() + 1);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v.push(self.c);
        v.extend_from_slice(&self.w);
        v
    }

    pub fn from_flat(flat: &[f64], m: usize) -> Result<Self> {
        if flat.len() != 3 * m + 1 {
            return Err(Error::Domain(format!(
                "expected {} values, got {}",
                3 * m + 1,
                flat.len()
            )));
        }
        Ok(Weights {
            a: flat[..m].to_vec(),
            b: flat[m..2 * m].to_vec(),
            c: flat[2 * m],
            w: flat[2 * m + 1..].to_vec(),
        })
    }
}

/// Centered symmetric distribution for the initial weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dist {
    Normal { variance: f64 },
    Uniform { radius: f64 },
}

impl Dist {
    /// He initialization, normal(0, 2).
    pub const HE: Dist = Dist::Normal { variance: 2.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Normal { variance } if variance.is_finite() && variance > 0.0 => Ok(()),
            Dist::Uniform { radius } if radius.is_finite() && radius > 0.0 => Ok(()),
            other => Err(Error::Config(format!(
                "invalid distribution descriptor {other:?}"
            ))),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Dist::Normal { variance } => variance,
            Dist::Uniform { radius } => radius * radius / 3.0,
        }
    }

    pub(crate) fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Dist::Normal { variance } => Sampler::Normal(
                Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?,
            ),
            Dist::Uniform { radius } => Sampler::Uniform(
                Uniform::new(-radius, radius).map_err(|e| Error::Config(e.to_string()))?,
            ),
        })
    }
}

pub(crate) enum Sampler {
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
}

impl Sampler {
    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub dist_a: Dist,
    pub dist_w: Dist,
    pub seed: u64,
}

impl InitSpec {
    pub fn he(seed: u64) -> Self {
        InitSpec {
            dist_a: Dist::HE,
            dist_w: Dist::HE,
            seed,
        }
    }
}

/// Draws the raw initialization values from the seeded stream: first `count`
/// draws of `dist_a`, then `count` draws of `dist_w` (unscaled).
pub fn init_draws(spec: &InitSpec, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let sa = spec.dist_a.sampler()?;
    let sw = spec.dist_w.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = (0..count).map(|_| sa.draw(&mut rng)).collect();
    let w = (0..count).map(|_| sw.draw(&mut rng)).collect();
    Ok((a, w))
}

/// Zero-bias initialization: b = 0, c = 0, a_i ~ Z_a, w_i ~ Z_w / √m.
pub fn init_weights(spec: &InitSpec, params: &Hyperparams) -> Result<Weights> {
    let m = params.m;
    let (a, draws_w) = init_draws(spec, m)?;
    let scale = 1.0 / (m as f64).sqrt();
    let w = draws_w.into_iter().map(|z| z * scale).collect();
    Ok(Weights {
        a,
        b: vec![0.0; m],
        c: 0.0,
        w,
    })
}

/// Network output at a scalar input.
pub fn forward(w: &Weights, params: &Hyperparams, x: f64) -> f64 {
    let mut f = w.c;
    for i in 0..w.a.len() {
        f += w.w[i] * phi(w.a[i] * x + w.b[i], params.alpha);
    }
    f
}

/// Same value as [`forward`] up to rounding, summed with four interleaved
/// accumulators to shorten the dependency chain. The order is fixed, so
/// results stay bit-reproducible.
#[inline]
fn forward_fast(w: &Weights, alpha: f64, x: f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let (a, b, ww) = (
        w.a.chunks_exact(4),
        w.b.chunks_exact(4),
        w.w.chunks_exact(4),
    );
    let (ra, rb, rw) = (a.remainder(), b.remainder(), ww.remainder());
    for ((a, b), ww) in a.zip(b).zip(ww) {
        for l in 0..4 {
            acc[l] += ww[l] * phi(a[l] * x + b[l], alpha);
        }
    }
    let mut f = w.c + ((acc[0] + acc[1]) + (acc[2] + acc[3]));
    for ((a, b), ww) in ra.iter().zip(rb).zip(rw) {
        f += ww * phi(a * x + b, alpha);
    }
    f
}

/// A collection of training samples, possibly with repeated points merged.
///
/// `groups` yields `(x, y, multiplicity)` in a fixed order; the loss is
/// normalized by `total`, the number of underlying samples.
pub trait Samples {
    fn total(&self) -> usize;
    fn groups(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_;
}

/// Gradient of the loss; same shape as [`Weights`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub da: Vec<f64>,
    pub db: Vec<f64>,
    pub dc: f64,
    pub dw: Vec<f64>,
}

impl Gradient {
    pub fn zeros(m: usize) -> Self {
        Gradient {
            da: vec![0.0; m],
            db: vec![0.0; m],
            dc: 0.0,
            dw: vec![0.0; m],
        }
    }

    fn reset(&mut self, m: usize) {
        for v in [&mut self.da, &mut self.db, &mut self.dw] {
            v.clear();
            v.resize(m, 0.0);
        }
        self.dc = 0.0;
    }

    pub fn max_abs(&self) -> f64 {
        self.da
            .iter()
            .chain(&self.db)
            .chain(&self.dw)
            .fold(self.dc.abs(), |acc, v| acc.max(v.abs()))
    }
}

/// Per-side residual moments r̂_σ = −(1/n) Σ_{x_j σ > 0} (f − y) x_j and
/// ŝ_σ = −(1/n) Σ (f − y), indexed by [`Sign::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualMoments {
    pub r_hat: [f64; 2],
    pub s_hat: [f64; 2],
}

fn nonempty<S: Samples + ?Sized>(data: &S) -> Result<f64> {
    match data.total() {
        0 => Err(Error::Domain("empty dataset".into())),
        n => Ok(n as f64),
    }
}

/// `(1/2n) Σ_j (y_j − f(x_j))²`.
pub fn empirical_loss<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
) -> Result<f64> {
    let n = nonempty(data)?;
    let mut s = 0.0;
    for (x, y, k) in data.groups() {
        let e = y - forward(w, params, x);
        s += k * e * e;
    }
    Ok(s / (2.0 * n))
}

/// Writes the gradient into `g` and returns the per-side residual moments
/// gathered on the way.
pub fn gradient_into<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
    g: &mut Gradient,
) -> Result<ResidualMoments> {
    let n = nonempty(data)?;
    let m = w.width();
    let alpha = params.alpha;
    g.reset(m);
    let mut res = ResidualMoments::default();
    for (x, y, k) in data.groups() {
        let e = k * (forward_fast(w, alpha, x) - y) / n;
        g.dc += e;
        if let Some(sign) = Sign::of(x) {
            res.r_hat[sign.index()] -= e * x;
            res.s_hat[sign.index()] -= e;
        }
        let ex = e * x;
        let params_iter = w.a.iter().zip(&w.b).zip(&w.w);
        let grads = g.da.iter_mut().zip(g.db.iter_mut()).zip(g.dw.iter_mut());
        for (((a, b), wi), ((da, db), dw)) in params_iter.zip(grads) {
            let z = a * x + b;
            let d = phi_prime(z, alpha);
            let wd = wi * d;
            *da += wd * ex;
            *db += wd * e;
            *dw += e * z * d;
        }
    }
    Ok(res)
}

/// Exact gradient of [`empirical_loss`].
pub fn gradient<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
) -> Result<Gradient> {
    let mut g = Gradient::zeros(w.width());
    gradient_into(w, params, data, &mut g)?;
    Ok(g)
}

/// In-place `W ← W − h g`.
pub fn apply_gradient(w: &mut Weights, g: &Gradient, h: f64) {
    for i in 0..w.width() {
        w.a[i] -= h * g.da[i];
        w.b[i] -= h * g.db[i];
        w.w[i] -= h * g.dw[i];
    }
    w.c -= h * g.dc;
}

/// One full-batch step, in place, reusing `scratch` for the gradient.
pub fn descend<S: Samples + ?Sized>(
    w: &mut Weights,
    params: &Hyperparams,
    data: &S,
    scratch: &mut Gradient,
) -> Result<ResidualMoments> {
    let res = gradient_into(w, params, data, scratch)?;
    apply_gradient(w, scratch, params.h);
    Ok(res)
}

/// `W − h ∇L_D(W)`.
pub fn gd_step<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    data: &S,
) -> Result<Weights> {
    let mut next = w.clone();
    let mut g = Gradient::zeros(w.width());
    descend(&mut next, params, data, &mut g)?;
    Ok(next)
}

/// A GD step on the batch's own loss, normalized by the batch size.
pub fn sgd_step<S: Samples + ?Sized>(
    w: &Weights,
    params: &Hyperparams,
    batch: &S,
) -> Result<Weights> {
    gd_step(w, params, batch)
}
