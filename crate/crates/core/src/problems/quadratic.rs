//! Two-player quadratic game with singular primal curvature.
//!
//! ```text
//! f_i(x, y) = 1/2 x^T P_i x - 1/2 y^T Q_i y + x^T R_i y
//! P_i = (1/n) sum_j p_ij p_ij^T
//! Q_i = (1/n) sum_j q_ij q_ij^T + alpha I
//! R_i = (1/n) sum_j r_ij r_ij^T
//! ```
//!
//! Per sample, `f_ij = 1/2 (p.x)^2 - 1/2 (q.y)^2 - alpha/2 |y|^2 + (r.x)(r.y)`.
//! All `p_ij` live in one fixed `(d-1)`-dimensional subspace, so every `P_i`
//! is singular and `f` is not strongly convex in `x`, while `Phi(x) =
//! max_y f(x, y)` still satisfies a Polyak–Łojasiewicz inequality.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MinimaxProblem, ProblemSnapshot, QuadraticSamples, SmoothnessConstants};
use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue, symmetric_norm};

#[derive(Clone, Debug)]
struct Agent {
    /// Samples as columns (`d x n`).
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p_mat: DMatrix<f64>,
    q_mat: DMatrix<f64>,
    r_mat: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct QuadraticGame {
    dim: usize,
    alpha: f64,
    seed: Option<u64>,
    agents: Vec<Agent>,
    p_bar: DMatrix<f64>,
    q_bar: DMatrix<f64>,
    r_bar: DMatrix<f64>,
    q_bar_chol: Option<Cholesky<f64, Dyn>>,
    constants: OnceLock<SmoothnessConstants>,
}

/// Random PL game with `M` agents of `n` samples in dimension `d`.
///
/// Samples `q_ij`, `r_ij` are standard Gaussian; `p_ij` is a standard
/// Gaussian with its component along a shared random unit direction removed.
pub fn generate_pl_game<R: Rng + ?Sized>(
    agents: usize,
    samples: usize,
    dim: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<QuadraticGame> {
    if agents == 0 {
        return Err(Error::invalid("PL game needs at least one agent"));
    }
    if dim < 2 {
        return Err(Error::invalid(format!("PL game needs d >= 2, got {dim}")));
    }
    if samples < dim {
        return Err(Error::invalid(format!(
            "PL game needs n >= d, got n={samples}, d={dim}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut null = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
    null /= null.norm();

    let gaussian = |rng: &mut R| DMatrix::<f64>::from_fn(dim, samples, |_, _| rng.sample(StandardNormal));
    let mut ps = Vec::with_capacity(agents);
    let mut qs = Vec::with_capacity(agents);
    let mut rs = Vec::with_capacity(agents);
    for _ in 0..agents {
        let mut p = gaussian(rng);
        for mut col in p.column_iter_mut() {
            let c = col.dot(&null);
            col.axpy(-c, &null, 1.0);
        }
        ps.push(p);
        qs.push(gaussian(rng));
        rs.push(gaussian(rng));
    }
    QuadraticGame::from_samples(ps, qs, rs, alpha)
}

fn gram(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.ncols() as f64;
    (s * s.transpose()) / n
}

impl QuadraticGame {
    /// Game from explicit sample blocks, one `d x n` matrix per agent with
    /// samples as columns.
    pub fn from_samples(
        p: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() || p.len() != r.len() {
            return Err(Error::dims("need the same nonzero number of p, q, r blocks"));
        }
        let dim = p[0].nrows();
        let m = p.len() as f64;
        let mut agents = Vec::with_capacity(p.len());
        for ((p, q), r) in p.into_iter().zip(q).zip(r) {
            let n = p.ncols();
            if n == 0 || [&p, &q, &r].iter().any(|s| s.nrows() != dim || s.ncols() != n) {
                return Err(Error::dims("sample blocks must all be d x n with n > 0"));
            }
            let p_mat = gram(&p);
            let q_mat = gram(&q) + DMatrix::identity(dim, dim) * alpha;
            let r_mat = gram(&r);
            agents.push(Agent {
                p,
                q,
                r,
                p_mat,
                q_mat,
                r_mat,
            });
        }
        let avg = |f: fn(&Agent) -> &DMatrix<f64>| {
            agents
                .iter()
                .fold(DMatrix::zeros(dim, dim), |acc, a| acc + f(a))
                / m
        };
        let p_bar = avg(|a| &a.p_mat);
        let q_bar = avg(|a| &a.q_mat);
        let r_bar = avg(|a| &a.r_mat);
        let q_bar_chol = Cholesky::new(q_bar.clone());
        Ok(QuadraticGame {
            dim,
            alpha,
            seed: None,
            agents,
            p_bar,
            q_bar,
            r_bar,
            q_bar_chol,
            constants: OnceLock::new(),
        })
    }

    /// Record the generator seed in snapshots.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self, agent: usize) -> &DMatrix<f64> {
        &self.agents[agent].p_mat
    }

    pub fn q(&self, agent: usize) -> &DMatrix<f64> {
        &self.agents[agent].q_mat
    }

    pub fn r(&self, agent: usize) -> &DMatrix<f64> {
        &self.agents[agent].r_mat
    }

    pub fn p_bar(&self) -> &DMatrix<f64> {
        &self.p_bar
    }

    pub fn q_bar(&self) -> &DMatrix<f64> {
        &self.q_bar
    }

    pub fn r_bar(&self) -> &DMatrix<f64> {
        &self.r_bar
    }

    /// Raw samples `(p_ij, q_ij, r_ij)`.
    pub fn sample(&self, agent: usize, j: usize) -> (&[f64], &[f64], &[f64]) {
        let a = &self.agents[agent];
        let d = self.dim;
        let range = j * d..(j + 1) * d;
        (
            &a.p.as_slice()[range.clone()],
            &a.q.as_slice()[range.clone()],
            &a.r.as_slice()[range],
        )
    }

    /// Full Hessian `[[P_i, R_i], [R_i^T, -Q_i]]` of `f_i`.
    pub fn hessian(&self, agent: usize) -> DMatrix<f64> {
        let a = &self.agents[agent];
        let d = self.dim;
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        h.view_mut((0, 0), (d, d)).copy_from(&a.p_mat);
        h.view_mut((0, d), (d, d)).copy_from(&a.r_mat);
        h.view_mut((d, 0), (d, d)).copy_from(&a.r_mat.transpose());
        h.view_mut((d, d), (d, d)).copy_from(&(-&a.q_mat));
        h
    }

    /// Global best response `y*(x) = argmax_y (1/M) sum_i f_i(x, y)`, the
    /// solution of `Qbar y = Rbar^T x`.
    pub fn best_response(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::dims(format!(
                "best response: x has length {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        let chol = self
            .q_bar_chol
            .as_ref()
            .ok_or_else(|| Error::Solver("averaged Q is not positive definite".into()))?;
        let rhs = self.r_bar.transpose() * DVector::from_column_slice(x);
        Ok(chol.solve(&rhs).as_slice().to_vec())
    }

    /// Averaged objective `f(x, y) = (1/M) sum_i f_i(x, y)`.
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let y = DVector::from_column_slice(y);
        0.5 * x.dot(&(&self.p_bar * &x)) - 0.5 * y.dot(&(&self.q_bar * &y))
            + x.dot(&(&self.r_bar * &y))
    }

    /// Primal function `Phi(x) = f(x, y*(x))`.
    pub fn primal_value(&self, x: &[f64]) -> Result<f64> {
        let y = self.best_response(x)?;
        Ok(self.value(x, &y))
    }

    /// Exact `grad_x f_i(x, y) = P_i x + R_i y`.
    pub fn local_grad_x(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let a = &self.agents[agent];
        let g = &a.p_mat * DVector::from_column_slice(x) + &a.r_mat * DVector::from_column_slice(y);
        g.as_slice().to_vec()
    }

    pub(super) fn snapshot(&self) -> ProblemSnapshot {
        ProblemSnapshot::Quadratic {
            dim: self.dim,
            alpha: self.alpha,
            seed: self.seed,
            agents: self
                .agents
                .iter()
                .map(|a| QuadraticSamples {
                    p: a.p.as_slice().to_vec(),
                    q: a.q.as_slice().to_vec(),
                    r: a.r.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub(super) fn from_snapshot(s: &ProblemSnapshot) -> Result<Self> {
        let ProblemSnapshot::Quadratic {
            dim,
            alpha,
            seed,
            agents,
        } = s
        else {
            return Err(Error::Data("not a quadratic snapshot".into()));
        };
        let block = |v: &[f64]| -> Result<DMatrix<f64>> {
            if *dim == 0 || v.len() % dim != 0 {
                return Err(Error::dims("sample block length not a multiple of dim"));
            }
            Ok(DMatrix::from_column_slice(*dim, v.len() / dim, v))
        };
        let mut p = Vec::new();
        let mut q = Vec::new();
        let mut r = Vec::new();
        for a in agents {
            p.push(block(&a.p)?);
            q.push(block(&a.q)?);
            r.push(block(&a.r)?);
        }
        let mut g = QuadraticGame::from_samples(p, q, r, *alpha)?;
        g.seed = *seed;
        Ok(g)
    }
}

impl MinimaxProblem for QuadraticGame {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_y(&self) -> usize {
        self.dim
    }

    fn agents(&self) -> usize {
        self.agents.len()
    }

    fn local_samples(&self, agent: usize) -> usize {
        self.agents[agent].p.ncols()
    }

    fn sample_value(&self, agent: usize, sample: usize, z: &[f64]) -> f64 {
        let (x, y) = z.split_at(self.dim);
        let (p, q, r) = self.sample(agent, sample);
        let px = dot(p, x);
        let qy = dot(q, y);
        0.5 * px * px - 0.5 * qy * qy - 0.5 * self.alpha * dot(y, y) + dot(r, x) * dot(r, y)
    }

    fn sample_grad(&self, agent: usize, sample: usize, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let (x, y) = z.split_at(d);
        let (p, q, r) = self.sample(agent, sample);
        let px = dot(p, x);
        let qy = dot(q, y);
        let rx = dot(r, x);
        let ry = dot(r, y);
        let (gx, gy) = out.split_at_mut(d);
        for k in 0..d {
            gx[k] = p[k] * px + r[k] * ry;
            gy[k] = -q[k] * qy - self.alpha * y[k] + r[k] * rx;
        }
    }

    fn local_value(&self, agent: usize, z: &[f64]) -> f64 {
        let a = &self.agents[agent];
        let (x, y) = z.split_at(self.dim);
        let x = DVector::from_column_slice(x);
        let y = DVector::from_column_slice(y);
        0.5 * x.dot(&(&a.p_mat * &x)) - 0.5 * y.dot(&(&a.q_mat * &y)) + x.dot(&(&a.r_mat * &y))
    }

    fn local_grad(&self, agent: usize, z: &[f64], out: &mut [f64]) {
        let a = &self.agents[agent];
        let d = self.dim;
        let (x, y) = z.split_at(d);
        let x = DVector::from_column_slice(x);
        let y = DVector::from_column_slice(y);
        let gx = &a.p_mat * &x + &a.r_mat * &y;
        let gy = a.r_mat.transpose() * &x - &a.q_mat * &y;
        out[..d].copy_from_slice(gx.as_slice());
        out[d..].copy_from_slice(gy.as_slice());
    }

    /// `mu = min_i lambda_min(Q_i)`, `L = max_i ||H_i||_2`.
    fn constants(&self) -> Option<SmoothnessConstants> {
        let c = self.constants.get_or_init(|| {
            let mu = self
                .agents
                .iter()
                .map(|a| min_eigenvalue(&a.q_mat))
                .fold(f64::INFINITY, f64::min);
            let l = (0..self.agents.len())
                .map(|i| symmetric_norm(&self.hessian(i)))
                .fold(0.0, f64::max);
            SmoothnessConstants {
                l,
                mu,
                kappa: l / mu,
                sigma: None,
            }
        });
        Some(*c)
    }

    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_norm, power_norm, PowerIteration};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn game(seed: u64) -> QuadraticGame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_pl_game(3, 40, 5, 1.0, &mut rng).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn p_is_singular_and_q_is_shifted() {
        for seed in 0..5 {
            let g = game(seed);
            for i in 0..3 {
                assert!(min_eigenvalue(g.p(i)) <= 1e-10);
                assert!(min_eigenvalue(g.q(i)) >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_pl_game(2, 10, 1, 1.0, &mut rng).is_err());
        assert!(generate_pl_game(2, 3, 5, 1.0, &mut rng).is_err());
        assert!(generate_pl_game(2, 10, 5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn zero_point_has_zero_gradient() {
        let g = game(1);
        let mut out = vec![1.0; 10];
        g.sample_grad(0, 3, &[0.0; 10], &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_mean_equals_exact_gradient() {
        let g = game(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_point(&mut rng, 10);
        for i in 0..3 {
            let all: Vec<usize> = (0..40).collect();
            let mut mean = vec![0.0; 10];
            g.batch_grad(i, &z, &all, &mut mean);
            let mut exact = vec![0.0; 10];
            g.local_grad(i, &z, &mut exact);
            for (a, b) in mean.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10);
            }
            let vmean: f64 = (0..40).map(|j| g.sample_value(i, j, &z)).sum::<f64>() / 40.0;
            assert!((vmean - g.local_value(i, &z)).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_q_samples_give_mu_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let n = 10;
        let p = DMatrix::from_fn(d, n, |_, _| rng.sample(StandardNormal));
        let r = DMatrix::from_fn(d, n, |_, _| rng.sample(StandardNormal));
        let g = QuadraticGame::from_samples(vec![p], vec![DMatrix::zeros(d, n)], vec![r], 1.0)
            .unwrap();
        assert!((g.constants().unwrap().mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_dominates_blocks_and_matches_power_iteration() {
        let g = game(4);
        let c = g.constants().unwrap();
        for i in 0..3 {
            assert!(c.l >= symmetric_norm(g.q(i)) - 1e-12);
            assert!(c.l >= symmetric_norm(g.p(i)) - 1e-12);
            let h = g.hessian(i);
            let p = power_norm(&h, PowerIteration::default());
            assert!((p - dense_norm(&h)).abs() < 1e-8);
        }
        assert!(c.kappa >= 1.0);
    }

    #[test]
    fn best_response_at_origin() {
        let g = game(5);
        assert!(g.best_response(&[0.0; 5]).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.best_response(&[0.0; 4]).is_err());
    }

    #[test]
    fn best_response_matches_gradient_ascent() {
        let g = game(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_point(&mut rng, 5);
        let ystar = g.best_response(&x).unwrap();
        // Ascent on the concave dual with step 1/lambda_max(Qbar).
        let step = 1.0 / crate::linalg::max_eigenvalue(g.q_bar());
        let xv = DVector::from_column_slice(&x);
        let mut y = DVector::zeros(5);
        for _ in 0..10_000 {
            let grad = g.r_bar().transpose() * &xv - g.q_bar() * &y;
            y += grad * step;
        }
        for (a, b) in y.iter().zip(&ystar) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = game(7).with_seed(7);
        let p = super::super::Problem::Quadratic(g.clone());
        let back = super::super::Problem::from_json(&p.to_json().unwrap()).unwrap();
        let g2 = back.as_quadratic().unwrap();
        assert_eq!(g2.seed(), Some(7));
        assert_eq!(g.p(1), g2.p(1));
        assert_eq!(g.q_bar(), g2.q_bar());
    }
}
