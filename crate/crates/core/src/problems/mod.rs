//! Local objectives `f_i(x, y)` with per-sample stochastic oracles.
//!
//! Every problem is a finite sum: agent `i` holds `n_i` samples and
//! `f_i = (1/n_i) sum_j f_ij`. A stochastic oracle call returns the gradient
//! of a single `f_ij`; drawing `j` uniformly makes it unbiased for `grad f_i`.
//!
//! Points are passed as concatenated `z = (x, y)` slices of length
//! `dim_x + dim_y`; gradients are returned in the same layout.

mod libsvm;
mod quadratic;
mod regression;

pub use libsvm::{load_libsvm, parse_libsvm, read_libsvm, write_libsvm, LibsvmData};
pub use quadratic::{generate_pl_game, QuadraticGame};
pub use regression::RobustRegression;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm_sq;

/// Smoothness and concavity moduli of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Lipschitz constant of every `grad f_i`.
    pub l: f64,
    /// Strong-concavity modulus in `y`.
    pub mu: f64,
    /// Condition number `L / mu`.
    pub kappa: f64,
    /// Oracle standard deviation bound, when estimated.
    pub sigma: Option<f64>,
}

impl SmoothnessConstants {
    pub fn new(l: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && l >= mu) {
            return Err(Error::invalid(format!(
                "need L >= mu > 0, got L={l}, mu={mu}"
            )));
        }
        Ok(SmoothnessConstants {
            l,
            mu,
            kappa: l / mu,
            sigma: None,
        })
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }
}

/// A decentralized finite-sum minimax problem.
pub trait MinimaxProblem: Send + Sync {
    fn dim_x(&self) -> usize;

    fn dim_y(&self) -> usize;

    fn dim(&self) -> usize {
        self.dim_x() + self.dim_y()
    }

    fn agents(&self) -> usize;

    /// Number of local samples `n_i` of agent `agent`.
    fn local_samples(&self, agent: usize) -> usize;

    fn total_samples(&self) -> usize {
        (0..self.agents()).map(|i| self.local_samples(i)).sum()
    }

    /// `f_ij(z)`.
    fn sample_value(&self, agent: usize, sample: usize, z: &[f64]) -> f64;

    /// Writes `grad f_ij(z)` into `out` (overwriting it).
    ///
    /// Indices are not checked in release builds; see
    /// [`MinimaxProblem::checked_sample_grad`].
    fn sample_grad(&self, agent: usize, sample: usize, z: &[f64], out: &mut [f64]);

    fn checked_sample_grad(&self, agent: usize, sample: usize, z: &[f64]) -> Result<Vec<f64>> {
        if agent >= self.agents() {
            return Err(Error::invalid(format!("agent {agent} out of range")));
        }
        if sample >= self.local_samples(agent) {
            return Err(Error::invalid(format!(
                "sample {sample} out of range for agent {agent}"
            )));
        }
        if z.len() != self.dim() {
            return Err(Error::dims(format!(
                "point has length {}, expected {}",
                z.len(),
                self.dim()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        self.sample_grad(agent, sample, z, &mut out);
        Ok(out)
    }

    /// `f_i(z)`.
    fn local_value(&self, agent: usize, z: &[f64]) -> f64 {
        let n = self.local_samples(agent);
        (0..n).map(|j| self.sample_value(agent, j, z)).sum::<f64>() / n as f64
    }

    /// Exact local gradient `grad f_i(z)`.
    fn local_grad(&self, agent: usize, z: &[f64], out: &mut [f64]) {
        let all: Vec<usize> = (0..self.local_samples(agent)).collect();
        self.batch_grad(agent, z, &all, out);
    }

    /// Minibatch mean `G_i(B) = (1/|B|) sum_{j in B} grad f_ij(z)`.
    ///
    /// Sums in the order of `batch`.
    fn batch_grad(&self, agent: usize, z: &[f64], batch: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; out.len()];
        for &j in batch {
            self.sample_grad(agent, j, z, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += v;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// Smoothness constants, when the problem can provide them.
    fn constants(&self) -> Option<SmoothnessConstants> {
        None
    }

    /// Downcast used by metrics that need a closed-form best response.
    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        None
    }

    /// Empirical oracle standard deviation at `z`:
    /// `sqrt(max_i (1/n_i) sum_j ||grad f_ij(z_i) - grad f_i(z_i)||^2)`.
    fn estimate_sigma(&self, z: &[f64]) -> f64 {
        let k = self.dim();
        let mut exact = vec![0.0; k];
        let mut g = vec![0.0; k];
        let mut worst = 0.0_f64;
        for i in 0..self.agents() {
            self.local_grad(i, z, &mut exact);
            let n = self.local_samples(i);
            let mut acc = 0.0;
            for j in 0..n {
                self.sample_grad(i, j, z, &mut g);
                g.iter_mut().zip(&exact).for_each(|(a, b)| *a -= b);
                acc += norm_sq(&g);
            }
            worst = worst.max(acc / n as f64);
        }
        worst.sqrt()
    }
}

/// The built-in problems behind one type.
#[derive(Clone, Debug)]
pub enum Problem {
    Quadratic(QuadraticGame),
    Regression(RobustRegression),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::Quadratic($p) => $e,
            Problem::Regression($p) => $e,
        }
    };
}

impl MinimaxProblem for Problem {
    fn dim_x(&self) -> usize {
        delegate!(self, p => p.dim_x())
    }
    fn dim_y(&self) -> usize {
        delegate!(self, p => p.dim_y())
    }
    fn agents(&self) -> usize {
        delegate!(self, p => p.agents())
    }
    fn local_samples(&self, agent: usize) -> usize {
        delegate!(self, p => p.local_samples(agent))
    }
    fn sample_value(&self, agent: usize, sample: usize, z: &[f64]) -> f64 {
        delegate!(self, p => p.sample_value(agent, sample, z))
    }
    fn sample_grad(&self, agent: usize, sample: usize, z: &[f64], out: &mut [f64]) {
        delegate!(self, p => p.sample_grad(agent, sample, z, out))
    }
    fn local_value(&self, agent: usize, z: &[f64]) -> f64 {
        delegate!(self, p => p.local_value(agent, z))
    }
    fn local_grad(&self, agent: usize, z: &[f64], out: &mut [f64]) {
        delegate!(self, p => p.local_grad(agent, z, out))
    }
    fn constants(&self) -> Option<SmoothnessConstants> {
        delegate!(self, p => p.constants())
    }
    fn as_quadratic(&self) -> Option<&QuadraticGame> {
        match self {
            Problem::Quadratic(g) => Some(g),
            Problem::Regression(_) => None,
        }
    }
}

/// Serializable copy of a problem's raw data.
///
/// Sample blocks are row-major `n x d` (one sample per row).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSnapshot {
    Quadratic {
        dim: usize,
        alpha: f64,
        seed: Option<u64>,
        agents: Vec<QuadraticSamples>,
    },
    Regression {
        dim: usize,
        alpha: f64,
        agents: Vec<RegressionSamples>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSamples {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Problem {
    pub fn snapshot(&self) -> ProblemSnapshot {
        match self {
            Problem::Quadratic(g) => g.snapshot(),
            Problem::Regression(r) => r.snapshot(),
        }
    }

    pub fn from_snapshot(s: &ProblemSnapshot) -> Result<Self> {
        Ok(match s {
            ProblemSnapshot::Quadratic { .. } => Problem::Quadratic(QuadraticGame::from_snapshot(s)?),
            ProblemSnapshot::Regression { .. } => {
                Problem::Regression(RobustRegression::from_snapshot(s)?)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_snapshot(&serde_json::from_str(s)?)
    }
}
