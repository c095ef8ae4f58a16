//! Fixed-size symmetric linear algebra.
//!
//! Everything here operates on matrices of dimension at most 4, so a cyclic
//! Jacobi sweep is both exact enough and cheap.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec4 = nalgebra::Vector4<f64>;

/// Relative off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix. Eigenvalues are sorted in
/// descending order and `vectors` holds the matching unit eigenvectors as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen<const N: usize> {
    pub values: SVector<f64, N>,
    pub vectors: SMatrix<f64, N, N>,
}

fn off_diagonal_norm<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in 0..N {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition. Only the symmetric part of `a` is used.
pub fn jacobi_eigen<const N: usize>(a: &SMatrix<f64, N, N>) -> Result<SymEigen<N>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite entry in eigensolver input".into(),
        ));
    }
    let mut a = (a + a.transpose()) * 0.5;
    let mut v = SMatrix::<f64, N, N>::identity();
    let scale = a.norm();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > JACOBI_TOL * scale {
        return Err(Error::Numerical(
            "Jacobi eigensolver did not converge".into(),
        ));
    }
    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let mut values = SVector::<f64, N>::zeros();
    let mut vectors = SMatrix::<f64, N, N>::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Symmetric square root through the eigendecomposition. Tiny negative
/// eigenvalues from rounding are clamped to zero.
pub fn sym_sqrt<const N: usize>(a: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    let eig = jacobi_eigen(a)?;
    let mut d = SMatrix::<f64, N, N>::zeros();
    for i in 0..N {
        d[(i, i)] = eig.values[i].max(0.0).sqrt();
    }
    Ok(eig.vectors * d * eig.vectors.transpose())
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm<const R: usize, const C: usize>(a: &SMatrix<f64, R, C>) -> f64 {
    (0..R)
        .map(|i| (0..C).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute entry of a vector.
pub fn max_abs<const N: usize>(v: &SVector<f64, N>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximum absolute deviation from symmetry.
pub fn asymmetry<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    (a - a.transpose()).amax()
}
