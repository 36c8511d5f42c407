//! Experiment configuration (TOML canonical, JSON accepted).

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use decmm_core::rng::expand_seeds;
use decmm_core::{EstimatorKind, Sampling};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemConfig,
    pub graph: GraphConfig,
    pub algorithm: AlgorithmConfig,
    pub budget: Budget,
    /// Explicit run seeds. When empty, `replicates` seeds are expanded from
    /// `master_seed`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub init: InitConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_log_every() -> usize {
    100
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random quadratic PL game.
    PlGame {
        agents: usize,
        samples: usize,
        dim: usize,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// Robust regression on a LIBSVM file split over `agents`.
    Libsvm {
        path: PathBuf,
        agents: usize,
        #[serde(default)]
        dim_cap: Option<usize>,
        #[serde(default = "one")]
        alpha: f64,
    },
    /// Problem snapshot written by an earlier run.
    Snapshot { path: PathBuf },
}

impl ProblemConfig {
    /// Agent count, when known without loading data.
    pub fn agents(&self) -> Option<usize> {
        match self {
            ProblemConfig::PlGame { agents, .. } | ProblemConfig::Libsvm { agents, .. } => Some(*agents),
            ProblemConfig::Snapshot { .. } => None,
        }
    }

    pub fn set_agents(&mut self, m: usize) -> anyhow::Result<()> {
        match self {
            ProblemConfig::PlGame { agents, .. } | ProblemConfig::Libsvm { agents, .. } => {
                *agents = m;
                Ok(())
            }
            ProblemConfig::Snapshot { .. } => bail!("problem.agents: snapshot problems have a fixed agent count"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphConfig {
    /// Ring with weights 1/3.
    Ring,
    /// Complete graph, Metropolis weights.
    Complete,
    /// Path graph, Metropolis weights.
    Path,
    /// Connected Erdős–Rényi draw, Metropolis weights.
    ErdosRenyi {
        p: f64,
        #[serde(default)]
        seed: u64,
    },
    /// JSON graph spec.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepConfig {
    /// Theorem step sizes from the problem constants and the graph's rho,
    /// times `scale`; `eta_x` is further multiplied by `ratio_scale`.
    Theorem {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        ratio_scale: f64,
    },
    Explicit { eta_x: f64, eta_y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spider,
    Sgd,
    Storm,
    Exact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spider => "spider",
            Method::Sgd => "sgd",
            Method::Storm => "storm",
            Method::Exact => "exact",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "spider" | "dgda-vr" => Method::Spider,
            "sgd" => Method::Sgd,
            "storm" => Method::Storm,
            "exact" => Method::Exact,
            other => bail!("unknown method `{other}` (expected spider, sgd, storm or exact)"),
        })
    }
}

/// Default STORM constant `c` in `beta = min(1, c * eta_y^2)`.
pub const DEFAULT_STORM_C: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Methods run by `run`; `compare` takes its list from the command line.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub s1: usize,
    pub s2: usize,
    pub q: usize,
    /// Constant STORM momentum; overrides `storm_c`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub storm_c: Option<f64>,
    #[serde(default)]
    pub sampling: Sampling,
    pub step: StepConfig,
    #[serde(default)]
    pub parallel: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Spider]
}

impl AlgorithmConfig {
    pub fn estimator(&self, method: Method, eta_y: f64) -> EstimatorKind {
        match method {
            Method::Spider => EstimatorKind::Spider,
            Method::Sgd => EstimatorKind::Sgd,
            Method::Exact => EstimatorKind::Exact,
            Method::Storm => {
                let beta = self.beta.unwrap_or_else(|| {
                    (self.storm_c.unwrap_or(DEFAULT_STORM_C) * eta_y * eta_y).clamp(f64::MIN_POSITIVE, 1.0)
                });
                EstimatorKind::Storm { beta }
            }
        }
    }
}

/// Exactly one of the three budgets must be set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Iteration count `T` (may be 0).
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Passes over the combined dataset.
    #[serde(default)]
    pub epochs: Option<f64>,
    /// Per-agent sample draws, initialization included.
    #[serde(default)]
    pub oracle: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitConfig {
    /// Independent `N(0, scale^2)` entries per agent.
    Gaussian {
        #[serde(default = "one")]
        scale: f64,
    },
    /// One Gaussian point shared by all agents.
    Consensus {
        #[serde(default = "one")]
        scale: f64,
    },
    Zeros,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Gaussian { scale: 1.0 }
    }
}

/// A validation failure tied to a config field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug)]
pub struct ConfigErrors(pub Vec<FieldError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).context("parsing JSON config")?
        } else {
            toml::from_str(text).context("parsing TOML config")?
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Make relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.exists() {
                let joined = base.join(&*p);
                if joined.exists() {
                    *p = joined;
                }
            }
        };
        match &mut self.problem {
            ProblemConfig::Libsvm { path, .. } | ProblemConfig::Snapshot { path } => fix(path),
            ProblemConfig::PlGame { .. } => {}
        }
        if let GraphConfig::File { path } = &mut self.graph {
            fix(path);
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Structural checks. Data files are checked when the problem is loaded.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        let mut err = |path: &str, message: String| {
            errs.push(FieldError {
                path: path.into(),
                message,
            })
        };
        match &self.problem {
            ProblemConfig::PlGame {
                agents,
                samples,
                dim,
                alpha,
                ..
            } => {
                if *agents == 0 {
                    err("problem.agents", "must be >= 1".into());
                }
                if *dim < 2 {
                    err("problem.dim", format!("must be >= 2, got {dim}"));
                }
                if samples < dim {
                    err("problem.samples", format!("must be >= dim ({dim}), got {samples}"));
                }
                if !(*alpha > 0.0) {
                    err("problem.alpha", format!("must be > 0, got {alpha}"));
                }
            }
            ProblemConfig::Libsvm {
                agents,
                dim_cap,
                alpha,
                ..
            } => {
                if *agents == 0 {
                    err("problem.agents", "must be >= 1".into());
                }
                if *dim_cap == Some(0) {
                    err("problem.dim_cap", "must be >= 1".into());
                }
                if !(*alpha > 0.0) {
                    err("problem.alpha", format!("must be > 0, got {alpha}"));
                }
            }
            ProblemConfig::Snapshot { .. } => {}
        }
        if let GraphConfig::ErdosRenyi { p, .. } = self.graph {
            if !(p > 0.0 && p <= 1.0) {
                err("graph.p", format!("must be in (0, 1], got {p}"));
            }
        }
        if matches!(self.graph, GraphConfig::Ring) && self.problem.agents().is_some_and(|m| m == 2) {
            err("graph.kind", "a ring needs M = 1 or M >= 3".into());
        }
        let a = &self.algorithm;
        if a.methods.is_empty() {
            err("algorithm.methods", "must list at least one method".into());
        }
        for (name, v) in [("s1", a.s1), ("s2", a.s2), ("q", a.q)] {
            if v == 0 {
                err(&format!("algorithm.{name}"), "must be >= 1".into());
            }
        }
        if let Some(b) = a.beta {
            if !(b > 0.0 && b <= 1.0) {
                err("algorithm.beta", format!("must be in (0, 1], got {b}"));
            }
        }
        if let Some(c) = a.storm_c {
            if !(c > 0.0 && c.is_finite()) {
                err("algorithm.storm_c", format!("must be > 0, got {c}"));
            }
        }
        match a.step {
            StepConfig::Theorem { scale, ratio_scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    err("algorithm.step.scale", format!("must be > 0, got {scale}"));
                }
                if !(ratio_scale > 0.0 && ratio_scale.is_finite()) {
                    err("algorithm.step.ratio_scale", format!("must be > 0, got {ratio_scale}"));
                }
            }
            StepConfig::Explicit { eta_x, eta_y } => {
                if !(eta_x >= 0.0 && eta_x.is_finite()) {
                    err("algorithm.step.eta_x", format!("must be finite and >= 0, got {eta_x}"));
                }
                if !(eta_y >= 0.0 && eta_y.is_finite()) {
                    err("algorithm.step.eta_y", format!("must be finite and >= 0, got {eta_y}"));
                }
            }
        }
        let b = &self.budget;
        let set = [b.iterations.is_some(), b.epochs.is_some(), b.oracle.is_some()]
            .iter()
            .filter(|x| **x)
            .count();
        if set != 1 {
            err("budget", "set exactly one of iterations, epochs, oracle".into());
        }
        if let Some(e) = b.epochs {
            if !(e > 0.0 && e.is_finite()) {
                err("budget.epochs", format!("must be > 0, got {e}"));
            }
        }
        if b.oracle == Some(0) {
            err("budget.oracle", "must be > 0".into());
        }
        if self.seeds.is_empty() {
            match (self.master_seed, self.replicates) {
                (Some(_), Some(r)) if r > 0 => {}
                (Some(_), Some(_)) => err("replicates", "must be >= 1".into()),
                _ => err("seeds", "give a nonempty list, or master_seed with replicates".into()),
            }
        }
        if self.log_every == 0 {
            err("log_every", "must be >= 1".into());
        }
        match self.init {
            InitConfig::Gaussian { scale } | InitConfig::Consensus { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                err("init.scale", format!("must be finite and >= 0, got {scale}"));
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errs))
        }
    }

    /// Run seeds: the explicit list, or the expansion of `master_seed`.
    pub fn run_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        match (self.master_seed, self.replicates) {
            (Some(m), Some(r)) => expand_seeds(m, r),
            _ => Vec::new(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sampling override parsing for the command line.
pub fn parse_sampling(s: &str) -> anyhow::Result<Sampling> {
    match s {
        "uniform" => Ok(Sampling::Uniform),
        "full" => Ok(Sampling::Full),
        other => bail!("unknown sampling `{other}`"),
    }
}
