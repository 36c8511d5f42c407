//! Building runs from a config and executing them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use decmm_core::metrics::write_csv;
use decmm_core::network::{
    build_erdos_renyi, build_ring, metropolis_weights, ErdosRenyiOptions, GraphSpec,
};
use decmm_core::optimizer::{iterations_for_budget, loop_draws, init_draws, recommended_stepsizes, run};
use decmm_core::problems::{generate_pl_game, load_libsvm, ProblemSnapshot};
use decmm_core::rng::{stream, Purpose};
use decmm_core::{
    AgentStack, BatchSchedule, Error, EstimatorKind, MetricsRecord, MinimaxProblem, MixingMatrix, Problem,
    RunPlan, StepSizes, Topology,
};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Budget, ExperimentConfig, GraphConfig, InitConfig, Method, ProblemConfig, StepConfig};
use crate::stats::{spread, Spread};

pub fn build_problem(cfg: &ProblemConfig) -> anyhow::Result<Problem> {
    Ok(match cfg {
        ProblemConfig::PlGame {
            agents,
            samples,
            dim,
            alpha,
            data_seed,
        } => {
            let mut rng = stream(*data_seed, Purpose::Data, 0, 0);
            Problem::Quadratic(generate_pl_game(*agents, *samples, *dim, *alpha, &mut rng)?.with_seed(*data_seed))
        }
        ProblemConfig::Libsvm {
            path,
            agents,
            dim_cap,
            alpha,
        } => {
            if !path.exists() {
                bail!(
                    "problem.path: dataset {} not found (see scripts/fetch_datasets.sh)",
                    path.display()
                );
            }
            Problem::Regression(load_libsvm(path, *agents, *dim_cap, *alpha)?)
        }
        ProblemConfig::Snapshot { path } => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("problem.path: reading snapshot {}", path.display()))?;
            let snap: ProblemSnapshot = serde_json::from_str(&text)?;
            Problem::from_snapshot(&snap)?
        }
    })
}

pub fn build_graph(cfg: &GraphConfig, agents: usize) -> anyhow::Result<MixingMatrix> {
    if agents == 1 && !matches!(cfg, GraphConfig::File { .. }) {
        return Ok(MixingMatrix::trivial());
    }
    Ok(match cfg {
        GraphConfig::Ring => build_ring(agents)?,
        GraphConfig::Complete => metropolis_weights(&Topology::complete(agents)?)?,
        GraphConfig::Path => metropolis_weights(&Topology::path(agents)?)?,
        GraphConfig::ErdosRenyi { p, seed } => {
            let mut rng = stream(*seed, Purpose::Graph, agents as u64, 0);
            let topo = build_erdos_renyi(agents, *p, &mut rng, ErdosRenyiOptions::default())?;
            metropolis_weights(&topo)?
        }
        GraphConfig::File { path } => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("graph.path: reading {}", path.display()))?;
            let w = GraphSpec::from_json(&text)?.to_mixing()?;
            if w.agents() != agents {
                bail!("graph.path: graph has {} agents, problem has {agents}", w.agents());
            }
            w
        }
    })
}

/// `Z^0` for a run seed. Each agent's row comes from its own stream.
pub fn initial_point(init: InitConfig, problem: &dyn MinimaxProblem, seed: u64) -> AgentStack {
    let (m, k) = (problem.agents(), problem.dim());
    match init {
        InitConfig::Zeros => AgentStack::zeros(m, k),
        InitConfig::Gaussian { scale } => {
            let mut rows = Vec::with_capacity(m);
            for i in 0..m {
                let mut rng = stream(seed, Purpose::Init, i as u64, 0);
                rows.push((0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
            }
            AgentStack::from_rows(&rows).expect("rows have equal width")
        }
        InitConfig::Consensus { scale } => {
            let mut rng = stream(seed, Purpose::Init, u64::MAX, 0);
            let row: Vec<f64> = (0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            AgentStack::broadcast(m, &row)
        }
    }
}

pub fn step_sizes(step: StepConfig, problem: &dyn MinimaxProblem, rho: f64) -> anyhow::Result<StepSizes> {
    Ok(match step {
        StepConfig::Explicit { eta_x, eta_y } => StepSizes::new(eta_x, eta_y)?,
        StepConfig::Theorem { scale, ratio_scale } => {
            let c = problem
                .constants()
                .ok_or_else(|| anyhow!("algorithm.step: problem has no smoothness constants; use explicit steps"))?;
            recommended_stepsizes(c.l, c.kappa, rho, 1.0)?.scaled(scale, ratio_scale)?
        }
    })
}

/// Largest local sample count (draw accounting uses it for exact passes).
fn max_local(problem: &dyn MinimaxProblem) -> usize {
    (0..problem.agents()).map(|i| problem.local_samples(i)).max().unwrap_or(0)
}

/// Per-agent draw budget implied by an epoch or oracle budget.
pub fn oracle_budget(budget: &Budget, problem: &dyn MinimaxProblem) -> Option<u64> {
    if let Some(o) = budget.oracle {
        return Some(o);
    }
    budget
        .epochs
        .map(|e| (e * problem.total_samples() as f64 / problem.agents() as f64).ceil() as u64)
}

/// Iteration count of `method` under `budget`.
pub fn iterations_for(
    budget: &Budget,
    kind: EstimatorKind,
    schedule: BatchSchedule,
    cfg: &ExperimentConfig,
    problem: &dyn MinimaxProblem,
) -> usize {
    match (budget.iterations, oracle_budget(budget, problem)) {
        (Some(t), _) => t,
        (None, Some(draws)) => iterations_for_budget(kind, schedule, cfg.algorithm.sampling, max_local(problem), draws),
        (None, None) => 0,
    }
}

/// Per-agent draws, initialization included, of `iterations` steps.
pub fn draws_for(
    kind: EstimatorKind,
    schedule: BatchSchedule,
    cfg: &ExperimentConfig,
    problem: &dyn MinimaxProblem,
    iterations: usize,
) -> u64 {
    let n = max_local(problem);
    init_draws(kind, schedule, cfg.algorithm.sampling, n)
        + loop_draws(kind, schedule, cfg.algorithm.sampling, n, iterations)
}

/// Problem and network shared by all runs of a config.
pub struct Setup {
    pub problem: Problem,
    pub mixing: MixingMatrix,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let problem = build_problem(&cfg.problem)?;
        let mixing = build_graph(&cfg.graph, problem.agents())?;
        Ok(Setup { problem, mixing })
    }
}

/// Outcome of one `(seed, method)` run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub plan: RunPlan,
    pub trajectory: Vec<MetricsRecord>,
    pub tau: Option<usize>,
    pub diverged_at: Option<usize>,
}

impl RunResult {
    pub fn last(&self) -> &MetricsRecord {
        self.trajectory.last().expect("trajectory holds the t = 0 record")
    }

    pub fn csv_name(&self) -> String {
        format!("{}-seed{}.csv", self.method, self.seed)
    }

    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_csv(&self.trajectory, &mut buf).expect("writing to memory");
        buf
    }
}

/// Run `method` for `iterations` steps with run seed `seed`.
pub fn run_one(
    cfg: &ExperimentConfig,
    setup: &Setup,
    method: Method,
    seed: u64,
    iterations: Option<usize>,
) -> anyhow::Result<RunResult> {
    let problem = &setup.problem;
    let eta = step_sizes(cfg.algorithm.step, problem, setup.mixing.rho())?;
    let kind = cfg.algorithm.estimator(method, eta.eta_y);
    let a = &cfg.algorithm;
    let schedule = BatchSchedule::new(a.s1, a.s2, a.q)?;
    let t = iterations.unwrap_or_else(|| iterations_for(&cfg.budget, kind, schedule, cfg, problem));
    let mut plan = RunPlan::new(t, eta, schedule, kind);
    plan.sampling = a.sampling;
    plan.parallel = a.parallel;
    let z0 = initial_point(cfg.init, problem, seed);
    match run(&plan, problem, &setup.mixing, &z0, seed, cfg.log_every) {
        Ok(out) => Ok(RunResult {
            method,
            seed,
            plan,
            trajectory: out.trajectory,
            tau: Some(out.tau),
            diverged_at: None,
        }),
        Err(Error::Diverged { iteration, trajectory }) => {
            log::warn!("{method} seed {seed} diverged at t = {iteration}");
            Ok(RunResult {
                method,
                seed,
                plan,
                trajectory,
                tau: None,
                diverged_at: Some(iteration),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub t: usize,
    pub epoch: f64,
    pub oracle_calls: u64,
    pub comm_rounds: usize,
    pub stationarity: f64,
    pub consensus: f64,
    pub dual_subopt: Option<f64>,
    pub grad_phi_norm: Option<f64>,
}

impl From<&MetricsRecord> for FinalMetrics {
    fn from(r: &MetricsRecord) -> Self {
        FinalMetrics {
            t: r.t,
            epoch: r.epoch,
            oracle_calls: r.oracle_calls,
            comm_rounds: r.comm_rounds,
            stationarity: r.stationarity,
            consensus: r.consensus,
            dual_subopt: r.dual_subopt,
            grad_phi_norm: r.grad_phi_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub csv: String,
    pub iterations: usize,
    pub eta_x: f64,
    pub eta_y: f64,
    pub estimator: EstimatorKind,
    pub tau: Option<usize>,
    pub diverged_at: Option<usize>,
    pub initial: FinalMetrics,
    #[serde(rename = "final")]
    pub last: FinalMetrics,
}

/// Per-method statistics over converged runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub runs: usize,
    pub diverged: usize,
    pub stationarity: Option<Spread>,
    pub consensus: Option<Spread>,
    pub dual_subopt: Option<Spread>,
    pub grad_phi_norm: Option<Spread>,
    /// Sum over runs of per-agent sample draws.
    pub total_oracle_calls: u64,
    pub total_comm_rounds: u64,
}

impl MethodStats {
    pub fn of(runs: &[&RunSummary]) -> Self {
        let ok: Vec<&FinalMetrics> = runs.iter().filter(|r| r.diverged_at.is_none()).map(|r| &r.last).collect();
        let col = |f: &dyn Fn(&FinalMetrics) -> Option<f64>| -> Option<Spread> {
            let v: Vec<f64> = ok.iter().filter_map(|m| f(m)).collect();
            spread(&v)
        };
        MethodStats {
            runs: runs.len(),
            diverged: runs.len() - ok.len(),
            stationarity: col(&|m| Some(m.stationarity)),
            consensus: col(&|m| Some(m.consensus)),
            dual_subopt: col(&|m| m.dual_subopt),
            grad_phi_norm: col(&|m| m.grad_phi_norm),
            total_oracle_calls: runs.iter().map(|r| r.last.oracle_calls).sum(),
            total_comm_rounds: runs.iter().map(|r| r.last.comm_rounds as u64).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub master_seed: Option<u64>,
    pub agents: usize,
    pub rho: f64,
    pub methods: BTreeMap<String, MethodStats>,
    pub runs: Vec<RunSummary>,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("decmm".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("decmm-core".to_string(), decmm_core::VERSION.to_string()),
    ])
}

pub fn summarize(cfg: &ExperimentConfig, setup: &Setup, results: &[RunResult]) -> Summary {
    let runs: Vec<RunSummary> = results
        .iter()
        .map(|r| RunSummary {
            method: r.method,
            seed: r.seed,
            csv: r.csv_name(),
            iterations: r.plan.iterations,
            eta_x: r.plan.step.eta_x,
            eta_y: r.plan.step.eta_y,
            estimator: r.plan.estimator,
            tau: r.tau,
            diverged_at: r.diverged_at,
            initial: FinalMetrics::from(&r.trajectory[0]),
            last: FinalMetrics::from(r.last()),
        })
        .collect();
    let mut methods = BTreeMap::new();
    for m in &cfg.algorithm.methods {
        let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.method == *m).collect();
        methods.insert(m.to_string(), MethodStats::of(&mine));
    }
    Summary {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        versions: versions(),
        seeds: cfg.run_seeds(),
        master_seed: cfg.master_seed,
        agents: setup.problem.agents(),
        rho: setup.mixing.rho(),
        methods,
        runs,
    }
}

/// Every `(method, seed)` run of `cfg` on the rayon pool, in config order.
pub fn run_all(cfg: &ExperimentConfig, setup: &Setup) -> anyhow::Result<Vec<RunResult>> {
    let jobs: Vec<(Method, u64)> = cfg
        .algorithm
        .methods
        .iter()
        .flat_map(|m| cfg.run_seeds().into_iter().map(move |s| (*m, s)))
        .collect();
    jobs.par_iter()
        .map(|&(m, s)| run_one(cfg, setup, m, s, None))
        .collect()
}

/// Files written by [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub summary_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub results: Vec<RunResult>,
}

/// Run every method and seed, write one CSV per run and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let setup = Setup::new(cfg)?;
    let results = run_all(cfg, &setup)?;
    let mut csv_paths = Vec::new();
    for r in &results {
        let path = cfg.output.join(r.csv_name());
        write_atomic(&path, &r.csv_bytes())?;
        csv_paths.push(path);
    }
    let summary = summarize(cfg, &setup, &results);
    let summary_path = cfg.output.join("summary.json");
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(ExperimentOutput {
        summary,
        summary_path,
        csv_paths,
        results,
    })
}
