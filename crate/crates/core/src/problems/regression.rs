//! Robust nonconvex linear regression with adversarial feature perturbation.
//!
//! ```text
//! f_ij(x, y) = ln( (b_ij - x^T (a_ij + y))^2 / 2 + 1 ) - alpha/2 |y|^2
//! ```
//!
//! `y` perturbs the data point, so `dim_y == dim_x`.

use nalgebra::DMatrix;

use super::{MinimaxProblem, ProblemSnapshot, RegressionSamples, SmoothnessConstants};
use crate::error::{Error, Result};
use crate::linalg::{dot, max_eigenvalue};

#[derive(Clone, Debug)]
struct Shard {
    /// Data rows as columns (`d x n`).
    a: DMatrix<f64>,
    b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RobustRegression {
    dim: usize,
    alpha: f64,
    shards: Vec<Shard>,
}

impl RobustRegression {
    /// One `(features d x n, labels n)` pair per agent. Labels must be ±1.
    pub fn new(shards: Vec<(DMatrix<f64>, Vec<f64>)>, alpha: f64) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::invalid("regression needs at least one agent"));
        }
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        let dim = shards[0].0.nrows();
        let mut out = Vec::with_capacity(shards.len());
        for (i, (a, b)) in shards.into_iter().enumerate() {
            if a.nrows() != dim || a.ncols() != b.len() || b.is_empty() {
                return Err(Error::dims(format!(
                    "agent {i}: features {}x{} with {} labels",
                    a.nrows(),
                    a.ncols(),
                    b.len()
                )));
            }
            if let Some(bad) = b.iter().find(|&&v| v != 1.0 && v != -1.0) {
                return Err(Error::Data(format!("agent {i}: label {bad} is not ±1")));
            }
            out.push(Shard { a, b });
        }
        Ok(RobustRegression {
            dim,
            alpha,
            shards: out,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Raw sample `(a_ij, b_ij)`.
    pub fn sample(&self, agent: usize, j: usize) -> (&[f64], f64) {
        let s = &self.shards[agent];
        (&s.a.as_slice()[j * self.dim..(j + 1) * self.dim], s.b[j])
    }

    pub(super) fn snapshot(&self) -> ProblemSnapshot {
        ProblemSnapshot::Regression {
            dim: self.dim,
            alpha: self.alpha,
            agents: self
                .shards
                .iter()
                .map(|s| RegressionSamples {
                    a: s.a.as_slice().to_vec(),
                    b: s.b.clone(),
                })
                .collect(),
        }
    }

    pub(super) fn from_snapshot(s: &ProblemSnapshot) -> Result<Self> {
        let ProblemSnapshot::Regression { dim, alpha, agents } = s else {
            return Err(Error::Data("not a regression snapshot".into()));
        };
        let shards = agents
            .iter()
            .map(|a| {
                if a.a.len() != dim * a.b.len() {
                    return Err(Error::dims("feature block does not match label count"));
                }
                Ok((DMatrix::from_column_slice(*dim, a.b.len(), &a.a), a.b.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        RobustRegression::new(shards, *alpha)
    }

    /// Residual `b - x^T (a + y)`.
    #[inline]
    fn residual(&self, agent: usize, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let (a, b) = self.sample(agent, j);
        b - dot(x, a) - dot(x, y)
    }
}

impl MinimaxProblem for RobustRegression {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_y(&self) -> usize {
        self.dim
    }

    fn agents(&self) -> usize {
        self.shards.len()
    }

    fn local_samples(&self, agent: usize) -> usize {
        self.shards[agent].b.len()
    }

    fn sample_value(&self, agent: usize, sample: usize, z: &[f64]) -> f64 {
        let (x, y) = z.split_at(self.dim);
        let r = self.residual(agent, sample, x, y);
        (r * r / 2.0 + 1.0).ln() - 0.5 * self.alpha * dot(y, y)
    }

    fn sample_grad(&self, agent: usize, sample: usize, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let (x, y) = z.split_at(d);
        let (a, _) = self.sample(agent, sample);
        let r = self.residual(agent, sample, x, y);
        let c = -r / (r * r / 2.0 + 1.0);
        let (gx, gy) = out.split_at_mut(d);
        for k in 0..d {
            gx[k] = c * (a[k] + y[k]);
            gy[k] = c * x[k] - self.alpha * y[k];
        }
    }

    /// Local bound on the Hessian norm at the origin (no global constant
    /// exists): `L <= max((2/9) lambda_max(A_i), alpha) + (2/3)|mean b_i|`
    /// with `A_i = (1/n) sum_j a_ij a_ij^T`, and `mu = alpha`.
    fn constants(&self) -> Option<SmoothnessConstants> {
        let l = self
            .shards
            .iter()
            .map(|s| {
                let n = s.b.len() as f64;
                let gram = (&s.a * s.a.transpose()) / n;
                let mean_b = s.b.iter().sum::<f64>() / n;
                (2.0 / 9.0 * max_eigenvalue(&gram)).max(self.alpha) + 2.0 / 3.0 * mean_b.abs()
            })
            .fold(0.0, f64::max);
        Some(SmoothnessConstants {
            l,
            mu: self.alpha,
            kappa: l / self.alpha,
            sigma: None,
        })
    }
}
