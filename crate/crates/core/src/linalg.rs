//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::rng::splitmix64;

/// Settings for [`power_norm`].
#[derive(Clone, Copy, Debug)]
pub struct PowerIteration {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            rel_tol: 1e-12,
            max_iters: 200_000,
        }
    }
}

/// Deterministic start vector with no special structure (in particular not
/// parallel to the all-ones vector).
fn start_vector(n: usize) -> DVector<f64> {
    let mut s = 0x5EED_u64;
    DVector::from_fn(n, |_, _| {
        s = splitmix64(s);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

/// `||A||_2` by power iteration on `A^T A`.
pub fn power_norm(a: &DMatrix<f64>, opts: PowerIteration) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = start_vector(n);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..opts.max_iters {
        let av = a * &v;
        let w = a.transpose() * av;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= opts.rel_tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// `||A||_2` as the largest singular value from a dense SVD.
pub fn dense_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |m, s| m.max(*s))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_norm(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, e| m.max(e.abs()))
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, e| m.min(*e))
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, e| m.max(*e))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `out += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}
