//! Communication topologies and doubly stochastic mixing matrices.
//!
//! A [`MixingMatrix`] `W` encodes one synchronous gossip round: agent `i`
//! replaces its vector by `sum_j w_ij z_j`. Valid matrices are nonnegative,
//! supported on the topology's edges plus the diagonal, doubly stochastic,
//! and contract the disagreement subspace: `rho = ||W - (1/M) 11^T||_2 < 1`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_norm, power_norm, PowerIteration};
use crate::stack::AgentStack;

/// Tolerance on row/column sums used by [`spectral_gap`].
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Largest `M` for which the spectral gap is computed by dense SVD.
pub const DENSE_SPECTRAL_LIMIT: usize = 64;

/// Undirected graph over agents `0..M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    agents: usize,
    /// Normalized as `(i, j)` with `i < j`.
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Connected topology from an edge list.
    ///
    /// Rejects self-loops, out-of-range endpoints, duplicate edges (in either
    /// orientation) and disconnected graphs.
    pub fn new(agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let t = Self::from_edges_unchecked(agents, edges)?;
        if !t.is_connected() {
            return Err(Error::invalid(format!(
                "topology over {agents} agents is not connected"
            )));
        }
        Ok(t)
    }

    fn from_edges_unchecked(
        agents: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("topology needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop ({i},{i}) in edge list")));
            }
            if i >= agents || j >= agents {
                return Err(Error::invalid(format!(
                    "edge ({i},{j}) out of range for {agents} agents"
                )));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::invalid(format!("duplicate edge ({i},{j})")));
            }
        }
        Ok(Topology { agents, edges: set })
    }

    pub fn ring(agents: usize) -> Result<Self> {
        if agents < 3 {
            return Err(Error::invalid(format!("ring needs M >= 3, got {agents}")));
        }
        Self::new(agents, (0..agents).map(|i| (i, (i + 1) % agents)))
    }

    pub fn path(agents: usize) -> Result<Self> {
        Self::new(agents, (1..agents).map(|i| (i - 1, i)))
    }

    pub fn complete(agents: usize) -> Result<Self> {
        Self::new(
            agents,
            (0..agents).flat_map(|i| (i + 1..agents).map(move |j| (i, j))),
        )
    }

    /// Star with agent 0 at the centre.
    pub fn star(agents: usize) -> Result<Self> {
        Self::new(agents, (1..agents).map(|i| (0, i)))
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.agents];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.agents];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.agents];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.agents
    }
}

/// Options for [`build_erdos_renyi`].
#[derive(Clone, Copy, Debug)]
pub struct ErdosRenyiOptions {
    /// Redraws attempted before falling back.
    pub max_retries: usize,
    /// Union the last draw with a random Hamiltonian path when all redraws
    /// are disconnected.
    pub path_fallback: bool,
}

impl Default for ErdosRenyiOptions {
    fn default() -> Self {
        ErdosRenyiOptions {
            max_retries: 100,
            path_fallback: true,
        }
    }
}

/// Connected Erdős–Rényi graph `G(M, p)`.
pub fn build_erdos_renyi<R: Rng + ?Sized>(
    agents: usize,
    p: f64,
    rng: &mut R,
    opts: ErdosRenyiOptions,
) -> Result<Topology> {
    if agents < 2 {
        return Err(Error::invalid(format!(
            "Erdős–Rényi graph needs M >= 2, got {agents}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("edge probability {p} not in (0, 1]")));
    }
    let draw = |rng: &mut R| -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..agents {
            for j in i + 1..agents {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        edges
    };
    let mut last = Vec::new();
    for _ in 0..opts.max_retries.max(1) {
        last = draw(rng);
        let t = Topology::from_edges_unchecked(agents, last.iter().copied())?;
        if t.is_connected() {
            return Ok(t);
        }
    }
    if !opts.path_fallback {
        return Err(Error::GenerationFailed {
            attempts: opts.max_retries.max(1),
        });
    }
    let mut order: Vec<usize> = (0..agents).collect();
    order.shuffle(rng);
    let mut set: BTreeSet<(usize, usize)> = last.into_iter().collect();
    for w in order.windows(2) {
        set.insert((w[0].min(w[1]), w[0].max(w[1])));
    }
    Topology::new(agents, set)
}

/// A doubly stochastic gossip matrix with its cached spectral gap.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    rho: f64,
    /// Nonzero `(j, w_ij)` per row, ascending `j`.
    support: Vec<Vec<(usize, f64)>>,
    topology: Option<Topology>,
}

impl MixingMatrix {
    /// Wrap an explicit weight matrix.
    ///
    /// Fails if `W` is not doubly stochastic within [`STOCHASTIC_TOL`]; use
    /// [`validate_weights`] to inspect arbitrary matrices.
    pub fn from_weights(weights: DMatrix<f64>, topology: Option<Topology>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::dims(format!(
                "mixing matrix is {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if let Some(t) = &topology {
            if t.agents() != weights.nrows() {
                return Err(Error::dims(format!(
                    "topology has {} agents, matrix has {}",
                    t.agents(),
                    weights.nrows()
                )));
            }
        }
        let rho = spectral_gap(&weights)?;
        let support = (0..weights.nrows())
            .map(|i| {
                (0..weights.ncols())
                    .filter(|&j| weights[(i, j)] != 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(MixingMatrix {
            weights,
            rho,
            support,
            topology,
        })
    }

    /// Single-agent "network": `W = [1]`.
    pub fn trivial() -> Self {
        MixingMatrix::from_weights(DMatrix::from_element(1, 1, 1.0), None)
            .expect("1x1 identity is doubly stochastic")
    }

    /// Exact averaging `W = (1/M) 11^T`.
    pub fn averaging(agents: usize) -> Result<Self> {
        let topo = Topology::complete(agents)?;
        MixingMatrix::from_weights(
            DMatrix::from_element(agents, agents, 1.0 / agents as f64),
            Some(topo),
        )
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Spectral gap `||W - Pi||_2`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topology.as_ref()
    }

    /// One gossip round: returns `W Z`.
    ///
    /// Each output row is accumulated over the row's nonzeros in ascending
    /// column order, so results do not depend on threading.
    pub fn mix(&self, z: &AgentStack) -> AgentStack {
        assert_eq!(z.agents(), self.agents(), "mix: agent count mismatch");
        let mut out = AgentStack::zeros(z.agents(), z.width());
        self.mix_into(z, &mut out);
        out
    }

    pub fn mix_into(&self, z: &AgentStack, out: &mut AgentStack) {
        for (i, row) in self.support.iter().enumerate() {
            let o = out.row_mut(i);
            o.iter_mut().for_each(|v| *v = 0.0);
            for &(j, w) in row {
                for (ov, zv) in o.iter_mut().zip(z.row(j)) {
                    *ov += w * zv;
                }
            }
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_weights(&self.weights, self.topology.as_ref())
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            agents: self.agents(),
            edges: self
                .topology
                .as_ref()
                .map(|t| t.edges().map(|(i, j)| [i, j]).collect())
                .unwrap_or_default(),
            weights: Some(self.weights.transpose().as_slice().to_vec()),
            scheme: None,
        }
    }
}

/// Ring with weights `1/3` on self and both neighbours.
pub fn build_ring(agents: usize) -> Result<MixingMatrix> {
    let topo = Topology::ring(agents)?;
    let third = 1.0 / 3.0;
    let mut w = DMatrix::zeros(agents, agents);
    for i in 0..agents {
        w[(i, (i + agents - 1) % agents)] = third;
        w[(i, i)] = third;
        w[(i, (i + 1) % agents)] = third;
    }
    MixingMatrix::from_weights(w, Some(topo))
}

/// Metropolis–Hastings weights `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, with the remainder of each row on the diagonal.
pub fn metropolis_weights(topology: &Topology) -> Result<MixingMatrix> {
    let m = topology.agents();
    let deg = topology.degrees();
    let mut w = DMatrix::zeros(m, m);
    for (i, j) in topology.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_weights(w, Some(topology.clone()))
}

fn averaging_deviation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w.nrows();
    let avg = 1.0 / m as f64;
    DMatrix::from_fn(m, m, |i, j| w[(i, j)] - avg)
}

fn max_sum_deviations(w: &DMatrix<f64>) -> (f64, f64) {
    let row = w
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let col = w
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    (row, col)
}

/// `rho = ||W - Pi||_2`.
///
/// Uses a dense SVD for `M <= 64` and power iteration on
/// `(W - Pi)^T (W - Pi)` above that.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<f64> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::dims("spectral gap needs a nonempty square matrix"));
    }
    let (row, col) = max_sum_deviations(w);
    if row > STOCHASTIC_TOL || col > STOCHASTIC_TOL {
        return Err(Error::ContractViolation(format!(
            "matrix is not doubly stochastic (row dev {row:.3e}, col dev {col:.3e})"
        )));
    }
    if w.nrows() <= DENSE_SPECTRAL_LIMIT {
        Ok(spectral_gap_dense(w))
    } else {
        Ok(spectral_gap_power(w))
    }
}

pub fn spectral_gap_dense(w: &DMatrix<f64>) -> f64 {
    dense_norm(&averaging_deviation(w))
}

pub fn spectral_gap_power(w: &DMatrix<f64>) -> f64 {
    power_norm(&averaging_deviation(w), PowerIteration::default())
}

/// Pass/fail per mixing-matrix property with measured residuals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub agents: usize,
    pub nonnegative: bool,
    pub min_entry: f64,
    /// `None` when no topology was supplied.
    pub zero_pattern: Option<bool>,
    pub zero_pattern_violations: usize,
    pub doubly_stochastic: bool,
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
    pub spectral: bool,
    pub rho: f64,
    pub symmetric: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.nonnegative
            && self.zero_pattern.unwrap_or(true)
            && self.doubly_stochastic
            && self.spectral
    }

    /// Names of the failed properties.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if !self.nonnegative {
            f.push("nonnegativity");
        }
        if self.zero_pattern == Some(false) {
            f.push("decentralized zero pattern");
        }
        if !self.doubly_stochastic {
            f.push("doubly stochastic");
        }
        if !self.spectral {
            f.push("spectral gap");
        }
        f
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        writeln!(f, "agents              {}", self.agents)?;
        writeln!(
            f,
            "nonnegativity       {}  (min entry {:.3e})",
            mark(self.nonnegative),
            self.min_entry
        )?;
        match self.zero_pattern {
            Some(ok) => writeln!(
                f,
                "zero pattern        {}  ({} violations)",
                mark(ok),
                self.zero_pattern_violations
            )?,
            None => writeln!(f, "zero pattern        n/a   (no topology)")?,
        }
        writeln!(
            f,
            "doubly stochastic   {}  (row dev {:.3e}, col dev {:.3e})",
            mark(self.doubly_stochastic),
            self.max_row_deviation,
            self.max_col_deviation
        )?;
        write!(f, "spectral gap        {}  (rho {:.12})", mark(self.spectral), self.rho)
    }
}

/// Check every mixing-matrix property of an arbitrary square matrix.
pub fn validate_weights(w: &DMatrix<f64>, topology: Option<&Topology>) -> ValidationReport {
    let m = w.nrows();
    let min_entry = w.iter().copied().fold(f64::INFINITY, f64::min);
    let (row, col) = max_sum_deviations(w);
    let doubly = row <= STOCHASTIC_TOL && col <= STOCHASTIC_TOL;
    let (zero_pattern, violations) = match topology {
        Some(t) => {
            let v = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && w[(i, j)] != 0.0 && !t.has_edge(i, j))
                .count();
            (Some(v == 0 && t.agents() == m), v)
        }
        None => (None, 0),
    };
    let rho = dense_norm(&averaging_deviation(w));
    ValidationReport {
        agents: m,
        nonnegative: min_entry >= 0.0,
        min_entry,
        zero_pattern,
        zero_pattern_violations: violations,
        doubly_stochastic: doubly,
        max_row_deviation: row,
        max_col_deviation: col,
        spectral: rho < 1.0 - 1e-10,
        rho,
        symmetric: (w - w.transpose()).amax() == 0.0,
    }
}

/// JSON graph description.
///
/// Either explicit row-major `weights` or a named `scheme` (`"ring"` or
/// `"metropolis"`) must be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(rename = "M")]
    pub agents: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

impl GraphSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Raw weights and topology, without checking any mixing property.
    pub fn weights_and_topology(&self) -> Result<(DMatrix<f64>, Option<Topology>)> {
        let topo = if self.edges.is_empty() && self.agents > 1 {
            None
        } else {
            Some(Topology::from_edges_unchecked(
                self.agents,
                self.edges.iter().map(|e| (e[0], e[1])),
            )?)
        };
        match (&self.weights, self.scheme.as_deref()) {
            (Some(w), _) => {
                if w.len() != self.agents * self.agents {
                    return Err(Error::dims(format!(
                        "weights has {} entries, expected {}",
                        w.len(),
                        self.agents * self.agents
                    )));
                }
                Ok((DMatrix::from_row_slice(self.agents, self.agents, w), topo))
            }
            (None, Some(_)) => {
                let mm = self.to_mixing()?;
                Ok((mm.weights.clone(), mm.topology.clone()))
            }
            (None, None) => Err(Error::invalid("graph spec needs `weights` or `scheme`")),
        }
    }

    pub fn to_mixing(&self) -> Result<MixingMatrix> {
        match (&self.weights, self.scheme.as_deref()) {
            (Some(_), _) => {
                let (w, topo) = self.weights_and_topology()?;
                MixingMatrix::from_weights(w, topo)
            }
            (None, Some("ring")) => build_ring(self.agents),
            (None, Some("metropolis")) => {
                let topo = Topology::new(self.agents, self.edges.iter().map(|e| (e[0], e[1])))?;
                metropolis_weights(&topo)
            }
            (None, Some(other)) => Err(Error::invalid(format!("unknown scheme `{other}`"))),
            (None, None) => Err(Error::invalid("graph spec needs `weights` or `scheme`")),
        }
    }
}
