//! The network with d-dimensional inputs, `f(x) = c + Σ w_i φ(a_iᵀx + b_i)`.
//!
//! Trained on data lying on a line `x z`, its dynamics project exactly onto
//! the scalar network with `a_i = zᵀ a_i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};
use crate::model::{phi, phi_prime, Hyperparams, InitSpec, Weights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedWeights {
    pub d: usize,
    /// First-layer weights, row-major m × d.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub w: Vec<f64>,
}

impl EmbeddedWeights {
    pub fn width(&self) -> usize {
        self.w.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    /// The scalar network seen along `z`.
    pub fn project(&self, z: &[f64]) -> Result<Weights> {
        if z.len() != self.d {
            return Err(Error::Domain(format!(
                "direction has dimension {}, expected {}",
                z.len(),
                self.d
            )));
        }
        let a = (0..self.width()).map(|i| dot(self.row(i), z)).collect();
        Ok(Weights {
            a,
            b: self.b.clone(),
            c: self.c,
            w: self.w.clone(),
        })
    }
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(p, q)| p * q).sum()
}

/// Zero-bias initialization with every coordinate of a_i drawn from `dist_a`.
pub fn init_embedded(spec: &InitSpec, params: &Hyperparams, d: usize) -> Result<EmbeddedWeights> {
    if d == 0 {
        return Err(Error::Config("input dimension must be at least 1".into()));
    }
    let m = params.m;
    let sa = spec.dist_a.sampler()?;
    let sw = spec.dist_w.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = (0..m * d).map(|_| sa.draw(&mut rng)).collect();
    let scale = 1.0 / (m as f64).sqrt();
    let w = (0..m).map(|_| sw.draw(&mut rng) * scale).collect();
    Ok(EmbeddedWeights {
        d,
        a,
        b: vec![0.0; m],
        c: 0.0,
        w,
    })
}

pub fn forward_embedded(w: &EmbeddedWeights, params: &Hyperparams, x: &[f64]) -> f64 {
    let mut f = w.c;
    for i in 0..w.width() {
        f += w.w[i] * phi(dot(w.row(i), x) + w.b[i], params.alpha);
    }
    f
}

pub fn embedded_loss(
    w: &EmbeddedWeights,
    params: &Hyperparams,
    data: &EmbeddedDataset,
) -> Result<f64> {
    let n = check(w, data)?;
    let s: f64 = data
        .points
        .iter()
        .map(|(x, y)| {
            let e = y - forward_embedded(w, params, x);
            e * e
        })
        .sum();
    Ok(s / (2.0 * n))
}

fn check(w: &EmbeddedWeights, data: &EmbeddedDataset) -> Result<f64> {
    if data.points.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    if data.d != w.d {
        return Err(Error::Domain(format!(
            "data dimension {} does not match network dimension {}",
            data.d, w.d
        )));
    }
    Ok(data.points.len() as f64)
}

/// One full-batch GD step, in place.
pub fn gd_step_embedded(
    w: &mut EmbeddedWeights,
    params: &Hyperparams,
    data: &EmbeddedDataset,
) -> Result<()> {
    let n = check(w, data)?;
    let (m, d) = (w.width(), w.d);
    let mut ga = vec![0.0; m * d];
    let mut gb = vec![0.0; m];
    let mut gw = vec![0.0; m];
    let mut gc = 0.0;
    for (x, y) in &data.points {
        let e = (forward_embedded(w, params, x) - y) / n;
        gc += e;
        for i in 0..m {
            let z = dot(w.row(i), x) + w.b[i];
            let dphi = phi_prime(z, params.alpha);
            let wd = w.w[i] * dphi * e;
            for k in 0..d {
                ga[i * d + k] += wd * x[k];
            }
            gb[i] += wd;
            gw[i] += e * z * dphi;
        }
    }
    let h = params.h;
    for (a, g) in w.a.iter_mut().zip(&ga) {
        *a -= h * g;
    }
    for i in 0..m {
        w.b[i] -= h * gb[i];
        w.w[i] -= h * gw[i];
    }
    w.c -= h * gc;
    Ok(())
}
