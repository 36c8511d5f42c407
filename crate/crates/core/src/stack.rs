//! Row-stacked per-agent vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `M x k` matrix whose row `i` belongs to agent `i`.
///
/// Rows are stored contiguously so an agent's vector can be borrowed as a
/// slice; this is the layout used for iterates `Z`, trackers `D` and
/// estimates `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentStack {
    agents: usize,
    width: usize,
    data: Vec<f64>,
}

impl AgentStack {
    pub fn zeros(agents: usize, width: usize) -> Self {
        AgentStack {
            agents,
            width,
            data: vec![0.0; agents * width],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::dims(format!(
                    "row {i} has length {}, expected {width}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(AgentStack {
            agents: rows.len(),
            width,
            data,
        })
    }

    /// Every agent holds a copy of `row`.
    pub fn broadcast(agents: usize, row: &[f64]) -> Self {
        let mut data = Vec::with_capacity(agents * row.len());
        for _ in 0..agents {
            data.extend_from_slice(row);
        }
        AgentStack {
            agents,
            width: row.len(),
            data,
        }
    }

    pub fn from_fn(agents: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(agents * width);
        for i in 0..agents {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        AgentStack {
            agents,
            width,
            data,
        }
    }

    #[inline]
    pub fn agents(&self) -> usize {
        self.agents
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1)).take(self.agents)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Column means, i.e. the network average `(1/M) 1^T Z`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for r in self.rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        let inv = 1.0 / self.agents as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// Column means restricted to columns `range`.
    pub fn mean_cols(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mean = self.mean();
        mean[range].to_vec()
    }

    /// Copy of columns `range` as a new stack.
    pub fn columns(&self, range: std::ops::Range<usize>) -> AgentStack {
        let width = range.len();
        let mut data = Vec::with_capacity(self.agents * width);
        for r in self.rows() {
            data.extend_from_slice(&r[range.clone()]);
        }
        AgentStack {
            agents: self.agents,
            width,
            data,
        }
    }

    /// `||Z - 1 zbar^T||_F^2`.
    pub fn consensus_violation(&self) -> f64 {
        let mean = self.mean();
        self.rows()
            .flat_map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)))
            .sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.agents, self.width, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        AgentStack::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub(crate) fn check_shape(&self, agents: usize, width: usize, what: &str) -> Result<()> {
        if self.agents != agents || self.width != width {
            return Err(Error::dims(format!(
                "{what} is {}x{}, expected {agents}x{width}",
                self.agents, self.width
            )));
        }
        Ok(())
    }
}
