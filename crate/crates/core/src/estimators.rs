//! Per-agent stochastic gradient estimators.
//!
//! Each agent keeps an estimate `v_i` of its local gradient at its current
//! iterate. The estimators differ in how `v_i^{t+1}` is formed once the new
//! iterate `z_i^{t+1}` is known:
//!
//! | kind     | update |
//! |----------|--------|
//! | `spider` | every `q` steps `v = G^{t+1}(C)` with `|C| = S1`, otherwise `v = G^{t+1}(B) - G^t(B) + v` with `|B| = S2` |
//! | `sgd`    | `v = G^{t+1}(B)`, `|B| = S2` |
//! | `storm`  | `v = G^{t+1}(B) + (1 - beta)(v - G^t(B))`, `|B| = S2` |
//! | `exact`  | `v = grad f_i(z^{t+1})` |
//!
//! `G^t(B)` is the minibatch mean gradient at `z_i^t`. Correction terms
//! evaluate the same sample indices at both iterates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::problems::MinimaxProblem;
use crate::rng::batch_indices;
use crate::stack::AgentStack;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    Spider,
    Sgd,
    Storm { beta: f64 },
    Exact,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Spider => "spider",
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Storm { .. } => "storm",
            EstimatorKind::Exact => "exact",
        }
    }
}

/// How minibatches are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Uniform draws with replacement from the local samples.
    #[default]
    Uniform,
    /// Every batch is the full local index set `0..n_i` (batch sizes ignored).
    Full,
}

/// Batch sizes `S1` (refresh), `S2` (correction) and refresh period `q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub s1: usize,
    pub s2: usize,
    pub q: usize,
}

impl BatchSchedule {
    pub fn new(s1: usize, s2: usize, q: usize) -> Result<Self> {
        if s1 == 0 || s2 == 0 || q == 0 {
            return Err(Error::invalid(format!(
                "batch schedule needs S1, S2, q >= 1, got S1={s1}, S2={s2}, q={q}"
            )));
        }
        if s2 < q {
            static WARNED: std::sync::Once = std::sync::Once::new();
            WARNED.call_once(|| log::warn!("S2={s2} < q={q}: the convergence guarantee assumes S2 >= q"));
        }
        Ok(BatchSchedule { s1, s2, q })
    }

    /// Per-agent sample draws of `iterations` loop steps of the SPIDER
    /// estimator: `ceil(T/q) S1 + (T - ceil(T/q)) S2`. Initialization is not
    /// included.
    pub fn spider_draws(&self, iterations: usize) -> u64 {
        let refresh = iterations.div_ceil(self.q);
        (refresh * self.s1 + (iterations - refresh) * self.s2) as u64
    }
}

/// Estimator state for all agents.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    kind: EstimatorKind,
    schedule: BatchSchedule,
    sampling: Sampling,
    seed: u64,
    v: AgentStack,
    prev_z: AgentStack,
    t: usize,
    oracle_calls: Vec<u64>,
    evaluations: Vec<u64>,
    init_calls: Vec<u64>,
    refresh_steps: usize,
    correction_steps: usize,
    parallel: bool,
}

struct AgentUpdate {
    draws: u64,
    evals: u64,
}

impl EstimatorState {
    /// Build `V^0` at `z0`.
    ///
    /// Stochastic estimators start from an `S1` minibatch at every agent
    /// (stream iteration 0); `exact` starts from the exact gradient.
    pub fn init<P: MinimaxProblem + ?Sized>(
        problem: &P,
        kind: EstimatorKind,
        schedule: BatchSchedule,
        sampling: Sampling,
        z0: &AgentStack,
        seed: u64,
    ) -> Result<Self> {
        z0.check_shape(problem.agents(), problem.dim(), "Z0")?;
        if let EstimatorKind::Storm { beta } = kind {
            check_beta(beta)?;
        }
        let m = problem.agents();
        let mut st = EstimatorState {
            kind,
            schedule,
            sampling,
            seed,
            v: AgentStack::zeros(m, problem.dim()),
            prev_z: z0.clone(),
            t: 0,
            oracle_calls: vec![0; m],
            evaluations: vec![0; m],
            init_calls: vec![0; m],
            refresh_steps: 0,
            correction_steps: 0,
            parallel: false,
        };
        let size = schedule.s1;
        let exact = kind == EstimatorKind::Exact;
        st.apply(problem, z0, |p, i, _z_old, z_new, v, seed, _t| {
            if exact {
                p.local_grad(i, z_new, v);
                let n = p.local_samples(i) as u64;
                return AgentUpdate { draws: n, evals: n };
            }
            let batch = draw(sampling, seed, i, 0, p.local_samples(i), size);
            p.batch_grad(i, z_new, &batch, v);
            AgentUpdate {
                draws: batch.len() as u64,
                evals: batch.len() as u64,
            }
        });
        st.init_calls = st.oracle_calls.clone();
        Ok(st)
    }

    /// Evaluate per-agent updates in parallel with rayon.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn schedule(&self) -> BatchSchedule {
        self.schedule
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    /// Current estimates `V^t`.
    pub fn v(&self) -> &AgentStack {
        &self.v
    }

    /// Iterate at which `V^t` was formed.
    pub fn prev_z(&self) -> &AgentStack {
        &self.prev_z
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Cumulative sample draws per agent, including initialization.
    pub fn oracle_calls(&self) -> &[u64] {
        &self.oracle_calls
    }

    /// Sample draws per agent made inside the loop (initialization excluded).
    pub fn loop_oracle_calls(&self) -> Vec<u64> {
        self.oracle_calls
            .iter()
            .zip(&self.init_calls)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Cumulative per-sample gradient evaluations per agent. A correction
    /// sample evaluated at two iterates counts twice here and once in
    /// [`EstimatorState::oracle_calls`].
    pub fn evaluations(&self) -> &[u64] {
        &self.evaluations
    }

    pub fn refresh_steps(&self) -> usize {
        self.refresh_steps
    }

    pub fn correction_steps(&self) -> usize {
        self.correction_steps
    }

    /// Advance to `Z^{t+1}` with the configured estimator.
    pub fn update<P: MinimaxProblem + ?Sized>(&mut self, problem: &P, z_new: &AgentStack) -> Result<()> {
        match self.kind {
            EstimatorKind::Spider => spider_update(self, problem, z_new),
            EstimatorKind::Sgd => sgd_update(self, problem, z_new),
            EstimatorKind::Storm { beta } => storm_update(self, problem, z_new, beta),
            EstimatorKind::Exact => exact_update(self, problem, z_new),
        }
    }

    fn check(&self, z_new: &AgentStack) -> Result<()> {
        z_new.check_shape(self.v.agents(), self.v.width(), "Z_new")
    }

    /// Run `f` for every agent on `(z_old_i, z_new_i, v_i)`, then record
    /// counters and move `prev_z` to `z_new`.
    fn apply<P, F>(&mut self, problem: &P, z_new: &AgentStack, f: F)
    where
        P: MinimaxProblem + ?Sized,
        F: Fn(&P, usize, &[f64], &[f64], &mut [f64], u64, usize) -> AgentUpdate + Sync,
    {
        let width = self.v.width();
        let seed = self.seed;
        let t = self.t;
        let prev = &self.prev_z;
        let counts: Vec<AgentUpdate> = if self.parallel {
            self.v
                .as_mut_slice()
                .par_chunks_mut(width)
                .enumerate()
                .map(|(i, v)| f(problem, i, prev.row(i), z_new.row(i), v, seed, t))
                .collect()
        } else {
            self.v
                .as_mut_slice()
                .chunks_mut(width)
                .enumerate()
                .map(|(i, v)| f(problem, i, prev.row(i), z_new.row(i), v, seed, t))
                .collect()
        };
        for (i, c) in counts.iter().enumerate() {
            self.oracle_calls[i] += c.draws;
            self.evaluations[i] += c.evals;
        }
        self.prev_z = z_new.clone();
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("STORM beta {beta} not in (0, 1]")));
    }
    Ok(())
}

fn draw(sampling: Sampling, seed: u64, agent: usize, key: usize, n: usize, size: usize) -> Vec<usize> {
    match sampling {
        Sampling::Uniform => batch_indices(seed, agent, key, n, size),
        Sampling::Full => (0..n).collect(),
    }
}

/// `G(B)` at `z_new` and `z_old` on the same batch.
fn paired_batch<P: MinimaxProblem + ?Sized>(
    p: &P,
    agent: usize,
    batch: &[usize],
    z_old: &[f64],
    z_new: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut g_new = vec![0.0; z_new.len()];
    let mut g_old = vec![0.0; z_new.len()];
    p.batch_grad(agent, z_new, batch, &mut g_new);
    p.batch_grad(agent, z_old, batch, &mut g_old);
    (g_new, g_old)
}

/// SPIDER step producing `V^{t+1}` from `V^t`.
///
/// Refreshes with `S1` samples when `t mod q == 0`, otherwise applies the
/// recursive correction with `S2` samples evaluated at both `Z^{t+1}` and
/// `Z^t`. Batches for this step come from stream iteration `t + 1`.
pub fn spider_update<P: MinimaxProblem + ?Sized>(
    state: &mut EstimatorState,
    problem: &P,
    z_new: &AgentStack,
) -> Result<()> {
    state.check(z_new)?;
    let refresh = state.t % state.schedule.q == 0;
    let sampling = state.sampling;
    let size = if refresh { state.schedule.s1 } else { state.schedule.s2 };
    state.apply(problem, z_new, |p, i, z_old, z_new, v, seed, t| {
        let batch = draw(sampling, seed, i, t + 1, p.local_samples(i), size);
        let draws = batch.len() as u64;
        if refresh {
            p.batch_grad(i, z_new, &batch, v);
            AgentUpdate { draws, evals: draws }
        } else {
            let (g_new, g_old) = paired_batch(p, i, &batch, z_old, z_new);
            for k in 0..v.len() {
                v[k] = (g_new[k] - g_old[k]) + v[k];
            }
            AgentUpdate {
                draws,
                evals: 2 * draws,
            }
        }
    });
    if refresh {
        state.refresh_steps += 1;
    } else {
        state.correction_steps += 1;
    }
    state.t += 1;
    Ok(())
}

/// Plain minibatch step: `v_i = G_i^{t+1}(B)` with `|B| = S2`.
pub fn sgd_update<P: MinimaxProblem + ?Sized>(
    state: &mut EstimatorState,
    problem: &P,
    z_new: &AgentStack,
) -> Result<()> {
    state.check(z_new)?;
    let sampling = state.sampling;
    let size = state.schedule.s2;
    state.apply(problem, z_new, |p, i, _z_old, z_new, v, seed, t| {
        let batch = draw(sampling, seed, i, t + 1, p.local_samples(i), size);
        p.batch_grad(i, z_new, &batch, v);
        let draws = batch.len() as u64;
        AgentUpdate { draws, evals: draws }
    });
    state.correction_steps += 1;
    state.t += 1;
    Ok(())
}

/// STORM step: `v = G^{t+1}(B) + (1 - beta)(v - G^t(B))` with `|B| = S2`.
///
/// `beta = 1` is plain SGD and skips the evaluation at the old iterate.
pub fn storm_update<P: MinimaxProblem + ?Sized>(
    state: &mut EstimatorState,
    problem: &P,
    z_new: &AgentStack,
    beta: f64,
) -> Result<()> {
    check_beta(beta)?;
    state.check(z_new)?;
    let sampling = state.sampling;
    let size = state.schedule.s2;
    state.apply(problem, z_new, |p, i, z_old, z_new, v, seed, t| {
        let batch = draw(sampling, seed, i, t + 1, p.local_samples(i), size);
        let draws = batch.len() as u64;
        if beta == 1.0 {
            p.batch_grad(i, z_new, &batch, v);
            return AgentUpdate { draws, evals: draws };
        }
        let (g_new, g_old) = paired_batch(p, i, &batch, z_old, z_new);
        let keep = 1.0 - beta;
        for k in 0..v.len() {
            v[k] = g_new[k] + keep * (v[k] - g_old[k]);
        }
        AgentUpdate {
            draws,
            evals: 2 * draws,
        }
    });
    state.correction_steps += 1;
    state.t += 1;
    Ok(())
}

/// Deterministic step: `v_i = grad f_i(z_i^{t+1})`, counted as a full pass.
pub fn exact_update<P: MinimaxProblem + ?Sized>(
    state: &mut EstimatorState,
    problem: &P,
    z_new: &AgentStack,
) -> Result<()> {
    state.check(z_new)?;
    state.apply(problem, z_new, |p, i, _z_old, z_new, v, _seed, _t| {
        p.local_grad(i, z_new, v);
        let n = p.local_samples(i) as u64;
        AgentUpdate { draws: n, evals: n }
    });
    state.refresh_steps += 1;
    state.t += 1;
    Ok(())
}

/// `||E||_F^2 = sum_i ||v_i - grad f_i(z_i)||^2` against exact gradients.
pub fn estimator_error<P: MinimaxProblem + ?Sized>(
    state: &EstimatorState,
    problem: &P,
    z: &AgentStack,
) -> Result<f64> {
    state.check(z)?;
    let mut g = vec![0.0; z.width()];
    let mut total = 0.0;
    for i in 0..z.agents() {
        problem.local_grad(i, z.row(i), &mut g);
        g.iter_mut().zip(state.v.row(i)).for_each(|(a, b)| *a = b - *a);
        total += norm_sq(&g);
    }
    Ok(total)
}
