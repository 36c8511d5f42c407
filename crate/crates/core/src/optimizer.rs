//! Decentralized gradient descent ascent with gradient tracking.
//!
//! One iteration, for the stacked iterates `Z = [X, Y]`, trackers
//! `D = [D_x, D_y]` and estimates `V`:
//!
//! ```text
//! X^{t+1} = W X^t - eta_x D_x^t
//! Y^{t+1} = W Y^t + eta_y D_y^t
//! V^{t+1} = estimator update at Z^{t+1}
//! D^{t+1} = W (D^t + V^{t+1} - V^t)
//! ```
//!
//! With `D^0 = V^0` the network averages obey `dbar^t = vbar^t`, so the
//! averaged iterate moves exactly like centralized GDA driven by `vbar`.
//! Agents exchange `(z_i, d_i)` once per iteration; that exchange is one
//! communication round.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BatchSchedule, EstimatorKind, EstimatorState, Sampling};
use crate::metrics::{snapshot, MetricsRecord};
use crate::network::MixingMatrix;
use crate::problems::MinimaxProblem;
use crate::rng::{stream, Purpose};
use crate::stack::AgentStack;

/// Iterates whose magnitude exceeds this are treated as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_x: f64,
    pub eta_y: f64,
}

impl StepSizes {
    /// Nonnegative finite step sizes. Zero steps give pure gossip.
    pub fn new(eta_x: f64, eta_y: f64) -> Result<Self> {
        for (name, v) in [("eta_x", eta_x), ("eta_y", eta_y)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(StepSizes { eta_x, eta_y })
    }

    /// Multiply both steps by `scale` and additionally `eta_x` by
    /// `ratio_scale` (which rescales `eta_x / eta_y`).
    pub fn scaled(self, scale: f64, ratio_scale: f64) -> Result<Self> {
        StepSizes::new(self.eta_x * scale * ratio_scale, self.eta_y * scale)
    }
}

/// Step sizes with the explicit constants of the convergence theorem:
///
/// ```text
/// eta_y = scale / (32 sqrt(5) L) * min(1/kappa, (1 - rho)^2)
/// eta_x = eta_y / (64 kappa^2)
/// ```
pub fn recommended_stepsizes(l: f64, kappa: f64, rho: f64, scale: f64) -> Result<StepSizes> {
    check_constants(l, kappa, rho)?;
    let eta_y = scale / (32.0 * 5f64.sqrt() * l) * (1.0 / kappa).min((1.0 - rho).powi(2));
    StepSizes::new(eta_y / (64.0 * kappa * kappa), eta_y)
}

fn check_constants(l: f64, kappa: f64, rho: f64) -> Result<()> {
    if !(l > 0.0) {
        return Err(Error::invalid(format!("L = {l} must be positive")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::invalid(format!("kappa = {kappa} must be >= 1")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho = {rho} not in [0, 1)")));
    }
    Ok(())
}

/// Which constants [`plan_budget`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantsMode {
    /// The theorem's explicit numeric constants.
    #[default]
    Explicit,
    /// Orders of magnitude only; every numeric constant set to one.
    Order,
}

/// Initial gaps entering the iteration bound: primal gap `Delta_Phi`, dual
/// gap `delta_0` and the initial consensus/tracking error `Lambda_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialGaps {
    pub delta_phi: f64,
    pub delta0: f64,
    pub lambda0: f64,
}

impl Default for InitialGaps {
    fn default() -> Self {
        InitialGaps {
            delta_phi: 1.0,
            delta0: 1.0,
            lambda0: 1.0,
        }
    }
}

/// Predicted communication rounds `T_eps` and per-agent oracle draws
/// `C_eps = ceil(T_eps / q) S1 + T_eps S2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub rounds: u64,
    pub oracle: u64,
}

impl Complexity {
    pub fn of(iterations: u64, schedule: BatchSchedule) -> Self {
        let q = schedule.q as u64;
        Complexity {
            rounds: iterations,
            oracle: iterations.div_ceil(q) * schedule.s1 as u64 + iterations * schedule.s2 as u64,
        }
    }
}

/// Everything [`run`] needs besides the problem and network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub iterations: usize,
    pub step: StepSizes,
    pub schedule: BatchSchedule,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub sampling: Sampling,
    pub epsilon: Option<f64>,
    pub predicted: Option<Complexity>,
    /// Evaluate per-agent estimator updates on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

impl RunPlan {
    pub fn new(iterations: usize, step: StepSizes, schedule: BatchSchedule, estimator: EstimatorKind) -> Self {
        RunPlan {
            iterations,
            step,
            schedule,
            estimator,
            sampling: Sampling::Uniform,
            epsilon: None,
            predicted: None,
            parallel: false,
        }
    }
}

/// Parameters and iteration count for target accuracy `epsilon`.
///
/// `S1` follows the theorem (`floor(100 * 323 kappa^2 sigma^2 / eps^2)` in
/// explicit mode, at least 1), `q = ceil(sqrt(S1))` and `S2 = q`. `T` is the
/// iteration bound rounded up to a multiple of `q`.
#[allow(clippy::too_many_arguments)]
pub fn plan_budget(
    l: f64,
    kappa: f64,
    rho: f64,
    sigma: f64,
    epsilon: f64,
    agents: usize,
    gaps: InitialGaps,
    mode: ConstantsMode,
) -> Result<RunPlan> {
    check_constants(l, kappa, rho)?;
    if !(epsilon > 0.0) || !(sigma >= 0.0) || agents == 0 {
        return Err(Error::invalid("need epsilon > 0, sigma >= 0 and at least one agent"));
    }
    let eps2 = epsilon * epsilon;
    let m = agents as f64;
    let (step, s1, bound) = match mode {
        ConstantsMode::Explicit => {
            let step = recommended_stepsizes(l, kappa, rho, 1.0)?;
            let s1 = (100.0 * 323.0 * kappa * kappa * sigma * sigma / eps2).floor();
            let bound = (gaps.delta_phi / step.eta_x)
                .max(18.0 * l * kappa * gaps.delta0 / step.eta_y)
                .max(9772.0 * l * l * kappa * kappa * gaps.lambda0 / m)
                * 300.0
                / eps2;
            (step, s1, bound)
        }
        ConstantsMode::Order => {
            let eta_y = (1.0 / kappa).min((1.0 - rho).powi(2)) / l;
            let step = StepSizes::new(eta_y / (kappa * kappa), eta_y)?;
            let s1 = (kappa * kappa * sigma * sigma / eps2).ceil();
            let bound = (gaps.delta_phi / step.eta_x)
                .max(l * kappa * gaps.delta0 / step.eta_y)
                .max(l * l * kappa * kappa * gaps.lambda0 / m)
                / eps2;
            (step, s1, bound)
        }
    };
    const LIMIT: f64 = (1u64 << 53) as f64;
    if !(s1 < LIMIT && bound < LIMIT) {
        return Err(Error::invalid(format!(
            "budget overflows: S1 = {s1:.3e}, T = {bound:.3e}"
        )));
    }
    let s1 = (s1 as usize).max(1);
    let q = (s1 as f64).sqrt().ceil() as usize;
    let schedule = BatchSchedule::new(s1, q, q)?;
    let t = (bound.ceil() as usize).max(1).div_ceil(q) * q;
    let mut plan = RunPlan::new(t, step, schedule, EstimatorKind::Spider);
    plan.epsilon = Some(epsilon);
    plan.predicted = Some(Complexity::of(t as u64, schedule));
    Ok(plan)
}

/// Per-agent sample draws of `steps` loop iterations for an agent with `n`
/// local samples. Initialization is not included.
pub fn loop_draws(kind: EstimatorKind, schedule: BatchSchedule, sampling: Sampling, n: usize, steps: usize) -> u64 {
    let (big, small) = match sampling {
        Sampling::Uniform => (schedule.s1, schedule.s2),
        Sampling::Full => (n, n),
    };
    let steps = steps as u64;
    match kind {
        EstimatorKind::Spider => {
            let refresh = steps.div_ceil(schedule.q as u64);
            refresh * big as u64 + (steps - refresh) * small as u64
        }
        EstimatorKind::Sgd | EstimatorKind::Storm { .. } => steps * small as u64,
        EstimatorKind::Exact => steps * n as u64,
    }
}

/// Per-agent draws spent building `V^0`.
pub fn init_draws(kind: EstimatorKind, schedule: BatchSchedule, sampling: Sampling, n: usize) -> u64 {
    match (kind, sampling) {
        (EstimatorKind::Exact, _) | (_, Sampling::Full) => n as u64,
        _ => schedule.s1 as u64,
    }
}

/// Smallest iteration count whose per-agent draws, initialization included,
/// reach `budget`.
pub fn iterations_for_budget(
    kind: EstimatorKind,
    schedule: BatchSchedule,
    sampling: Sampling,
    n: usize,
    budget: u64,
) -> usize {
    let init = init_draws(kind, schedule, sampling, n);
    if budget <= init {
        return 0;
    }
    let (mut lo, mut hi) = (0usize, 1usize);
    while init + loop_draws(kind, schedule, sampling, n, hi) < budget {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if init + loop_draws(kind, schedule, sampling, n, mid) >= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Full state of a run at iteration `t`.
#[derive(Clone, Debug)]
pub struct IterateState {
    z: AgentStack,
    d: AgentStack,
    estimator: EstimatorState,
    dim_x: usize,
    t: usize,
    comm_rounds: usize,
    seed: u64,
}

impl IterateState {
    /// `V^0` from the estimator's initial refresh at `z0` and `D^0 = V^0`.
    pub fn init<P: MinimaxProblem + ?Sized>(
        problem: &P,
        w: &MixingMatrix,
        z0: &AgentStack,
        kind: EstimatorKind,
        schedule: BatchSchedule,
        sampling: Sampling,
        seed: u64,
    ) -> Result<Self> {
        if w.agents() != problem.agents() {
            return Err(Error::dims(format!(
                "mixing matrix has {} agents, problem has {}",
                w.agents(),
                problem.agents()
            )));
        }
        z0.check_shape(problem.agents(), problem.dim(), "Z0")?;
        let estimator = EstimatorState::init(problem, kind, schedule, sampling, z0, seed)?;
        Ok(IterateState {
            z: z0.clone(),
            d: estimator.v().clone(),
            estimator,
            dim_x: problem.dim_x(),
            t: 0,
            comm_rounds: 0,
            seed,
        })
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.estimator = self.estimator.with_parallel(parallel);
        self
    }

    pub fn z(&self) -> &AgentStack {
        &self.z
    }

    pub fn x(&self) -> AgentStack {
        self.z.columns(0..self.dim_x)
    }

    pub fn y(&self) -> AgentStack {
        self.z.columns(self.dim_x..self.z.width())
    }

    /// Trackers `D^t`.
    pub fn d(&self) -> &AgentStack {
        &self.d
    }

    /// Estimates `V^t`.
    pub fn v(&self) -> &AgentStack {
        self.estimator.v()
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.estimator
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn comm_rounds(&self) -> usize {
        self.comm_rounds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn check_bounded(s: &AgentStack, t: usize) -> Result<()> {
    if !s.all_finite() || s.max_abs() > DIVERGENCE_BOUND {
        return Err(Error::Diverged {
            iteration: t,
            trajectory: Vec::new(),
        });
    }
    Ok(())
}

/// Advance `state` from `t` to `t + 1`.
///
/// Order: iterates move with the old trackers, the estimator updates at the
/// new iterates, then trackers absorb the estimate change and are mixed.
pub fn step<P: MinimaxProblem + ?Sized>(
    state: &mut IterateState,
    w: &MixingMatrix,
    eta: StepSizes,
    problem: &P,
) -> Result<()> {
    let dx = state.dim_x;
    let mut z_new = w.mix(&state.z);
    for i in 0..z_new.agents() {
        let d = state.d.row(i);
        let row = z_new.row_mut(i);
        for k in 0..dx {
            row[k] -= eta.eta_x * d[k];
        }
        for k in dx..row.len() {
            row[k] += eta.eta_y * d[k];
        }
    }
    check_bounded(&z_new, state.t)?;

    let v_old = state.estimator.v().clone();
    state.estimator.update(problem, &z_new)?;

    // (D - V^t) + V^{t+1}: keeps D == V exactly when W = [1].
    let mut innovation = state.d.clone();
    for ((dv, vo), vn) in innovation
        .as_mut_slice()
        .iter_mut()
        .zip(v_old.as_slice())
        .zip(state.estimator.v().as_slice())
    {
        *dv = (*dv - vo) + vn;
    }
    w.mix_into(&innovation, &mut state.d);
    check_bounded(&state.d, state.t)?;

    state.z = z_new;
    state.t += 1;
    state.comm_rounds += 1;
    Ok(())
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Vec<MetricsRecord>,
    /// Output index, uniform on `0..T` (0 when `T = 0`).
    pub tau: usize,
    /// `Z^tau`.
    pub output: AgentStack,
    pub final_state: IterateState,
}

/// Execute `plan.iterations` steps from `z0`, logging every `log_every`
/// iterations (and at `t = 0` and `t = T`).
///
/// `tau` is drawn before the loop and `Z^tau` is copied when reached, so
/// the output iterate is exact without storing the path.
pub fn run<P: MinimaxProblem + ?Sized>(
    plan: &RunPlan,
    problem: &P,
    w: &MixingMatrix,
    z0: &AgentStack,
    seed: u64,
    log_every: usize,
) -> Result<RunOutput> {
    if log_every == 0 {
        return Err(Error::invalid("log_every must be >= 1"));
    }
    if let EstimatorKind::Spider = plan.estimator {
        if plan.schedule.s2 < plan.schedule.q {
            log::debug!("running SPIDER with S2 < q");
        }
    }
    let start = Instant::now();
    let mut state = IterateState::init(
        problem,
        w,
        z0,
        plan.estimator,
        plan.schedule,
        plan.sampling,
        seed,
    )?
    .with_parallel(plan.parallel);
    let big_t = plan.iterations;
    let tau = if big_t == 0 {
        0
    } else {
        stream(seed, Purpose::Output, 0, 0).random_range(0..big_t)
    };
    let mut output = z0.clone();
    let mut trajectory = vec![snapshot(problem, &state, 0.0)?];
    while state.t < big_t {
        if state.t == tau {
            output = state.z.clone();
        }
        if let Err(e) = step(&mut state, w, plan.step, problem) {
            return Err(match e {
                Error::Diverged { iteration, .. } => Error::Diverged {
                    iteration,
                    trajectory,
                },
                other => other,
            });
        }
        if state.t % log_every == 0 || state.t == big_t {
            let rec = snapshot(problem, &state, start.elapsed().as_secs_f64())?;
            trajectory.push(rec);
        }
    }
    Ok(RunOutput {
        trajectory,
        tau,
        output,
        final_state: state,
    })
}
