//! One-axis sensitivity sweeps with long-format output.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::bail;
use decmm_core::rng::{derive_seed, expand_seeds, Purpose};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GraphConfig, StepConfig};
use crate::harness::{run_one, write_atomic, RunResult, Setup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "er_p")]
    ErP,
    #[serde(rename = "M")]
    Agents,
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "S2")]
    S2,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "eta_scale")]
    EtaScale,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::ErP => "er_p",
            Axis::Agents => "M",
            Axis::S1 => "S1",
            Axis::S2 => "S2",
            Axis::Q => "q",
            Axis::EtaScale => "eta_scale",
        }
    }

    fn integral(self) -> bool {
        matches!(self, Axis::Agents | Axis::S1 | Axis::S2 | Axis::Q)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "er_p" | "p" => Axis::ErP,
            "M" | "m" | "agents" => Axis::Agents,
            "S1" | "s1" => Axis::S1,
            "S2" | "s2" => Axis::S2,
            "q" | "Q" => Axis::Q,
            "eta_scale" => Axis::EtaScale,
            other => bail!("unknown axis `{other}` (expected er_p, M, S1, S2, q or eta_scale)"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub replicates: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.values.is_empty() {
            bail!("sweep.values: must be nonempty");
        }
        if self.replicates == 0 {
            bail!("sweep.replicates: must be >= 1");
        }
        for &v in &self.values {
            let ok = match self.axis {
                Axis::ErP => v > 0.0 && v <= 1.0,
                Axis::EtaScale => v > 0.0 && v.is_finite(),
                a => a.integral() && v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64,
            };
            if !ok {
                let want = match self.axis {
                    Axis::ErP => "a probability in (0, 1]",
                    Axis::EtaScale => "a positive number",
                    _ => "a positive integer",
                };
                bail!("sweep.values: {v} is not {want} for axis {}", self.axis);
            }
        }
        Ok(())
    }
}

/// Run seed and graph seed of replicate `r`.
///
/// Replicates take the config's seed list first, then extend it with an
/// expansion of the master (or first) seed. Graph seeds are derived
/// from the configured graph seed and the replicate index, so every replicate
/// sees an independent graph while different axis values are paired.
pub fn replicate_seeds(cfg: &ExperimentConfig, replicates: usize) -> Vec<(u64, u64)> {
    let mut seeds = cfg.run_seeds();
    if seeds.len() < replicates {
        let extra = expand_seeds(cfg.master_seed.or(seeds.first().copied()).unwrap_or(0), 2 * replicates);
        for s in extra {
            if seeds.len() == replicates {
                break;
            }
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
    }
    seeds.truncate(replicates);
    let base = match cfg.graph {
        GraphConfig::ErdosRenyi { seed, .. } => seed,
        _ => 0,
    };
    seeds
        .into_iter()
        .enumerate()
        .map(|(r, s)| (s, derive_seed(base, Purpose::Graph, r as u64, 0)))
        .collect()
}

/// Copy of `base` with the axis set to `value` and the graph seed applied.
pub fn apply_axis(base: &ExperimentConfig, axis: Axis, value: f64, graph_seed: u64) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let int = value as usize;
    match axis {
        Axis::ErP => cfg.graph = GraphConfig::ErdosRenyi { p: value, seed: graph_seed },
        Axis::Agents => cfg.problem.set_agents(int)?,
        Axis::S1 => cfg.algorithm.s1 = int,
        Axis::S2 => cfg.algorithm.s2 = int,
        Axis::Q => cfg.algorithm.q = int,
        Axis::EtaScale => {
            cfg.algorithm.step = match cfg.algorithm.step {
                StepConfig::Theorem { ratio_scale, .. } => StepConfig::Theorem {
                    scale: value,
                    ratio_scale,
                },
                StepConfig::Explicit { eta_x, eta_y } => StepConfig::Explicit {
                    eta_x: eta_x * value,
                    eta_y: eta_y * value,
                },
            }
        }
    }
    if axis != Axis::ErP {
        if let GraphConfig::ErdosRenyi { seed, .. } = &mut cfg.graph {
            *seed = graph_seed;
        }
    }
    Ok(cfg)
}

/// One long-format row per `(value, replicate, method)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub graph_seed: u64,
    pub rho: f64,
    pub mean_rho: f64,
    pub method: String,
    pub iterations: usize,
    pub oracle_calls: u64,
    pub comm_rounds: usize,
    pub epoch: f64,
    pub stationarity: f64,
    pub consensus: f64,
    pub dual_subopt: Option<f64>,
    pub grad_phi_norm: Option<f64>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
    pub trajectory_paths: Vec<PathBuf>,
}

struct Cell {
    value: f64,
    replicate: usize,
    seed: u64,
    graph_seed: u64,
    rho: f64,
    results: Vec<RunResult>,
}

fn value_label(v: f64) -> String {
    format!("{v}")
}

/// Run every `(value, replicate)` of the sweep for each configured method.
pub fn run_sensitivity(base: &ExperimentConfig, sweep: &SweepSpec) -> anyhow::Result<SweepOutput> {
    sweep.validate()?;
    base.validate()?;
    let seeds = replicate_seeds(base, sweep.replicates);
    let jobs: Vec<(f64, usize)> = sweep
        .values
        .iter()
        .flat_map(|&v| (0..sweep.replicates).map(move |r| (v, r)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(value, r)| -> anyhow::Result<Cell> {
            let (seed, graph_seed) = seeds[r];
            let cfg = apply_axis(base, sweep.axis, value, graph_seed)?;
            let setup = Setup::new(&cfg)?;
            let results = cfg
                .algorithm
                .methods
                .iter()
                .map(|&m| run_one(&cfg, &setup, m, seed, None))
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(Cell {
                value,
                replicate: r,
                seed,
                graph_seed,
                rho: setup.mixing.rho(),
                results,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let dir = base.output.join(format!("sweep-{}", sweep.axis));
    let mut rows = Vec::new();
    let mut trajectory_paths = Vec::new();
    for cell in &cells {
        let same: Vec<f64> = cells.iter().filter(|c| c.value == cell.value).map(|c| c.rho).collect();
        let mean_rho = same.iter().sum::<f64>() / same.len() as f64;
        for res in &cell.results {
            let last = res.last();
            rows.push(SweepRow {
                axis: sweep.axis.to_string(),
                value: cell.value,
                replicate: cell.replicate,
                seed: cell.seed,
                graph_seed: cell.graph_seed,
                rho: cell.rho,
                mean_rho,
                method: res.method.to_string(),
                iterations: res.plan.iterations,
                oracle_calls: last.oracle_calls,
                comm_rounds: last.comm_rounds,
                epoch: last.epoch,
                stationarity: last.stationarity,
                consensus: last.consensus,
                dual_subopt: last.dual_subopt,
                grad_phi_norm: last.grad_phi_norm,
                diverged_at: res.diverged_at,
            });
            let path = dir.join(format!(
                "{}-r{}-{}.csv",
                value_label(cell.value),
                cell.replicate,
                res.method
            ));
            write_atomic(&path, &res.csv_bytes())?;
            trajectory_paths.push(path);
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let csv_path = base.output.join(format!("sweep-{}.csv", sweep.axis));
    write_atomic(&csv_path, &w.into_inner()?)?;
    Ok(SweepOutput {
        rows,
        csv_path,
        trajectory_paths,
    })
}

/// Mean of `rho` per distinct axis value, in sweep order.
pub fn mean_rho_by_value(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !out.iter().any(|(v, _)| *v == r.value) {
            out.push((r.value, r.mean_rho));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn axis_names_roundtrip() {
        for a in [Axis::ErP, Axis::Agents, Axis::S1, Axis::S2, Axis::Q, Axis::EtaScale] {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert!("rho".parse::<Axis>().is_err());
    }

    #[test]
    fn values_are_type_checked() {
        let spec = |axis, values: Vec<f64>| SweepSpec { axis, values, replicates: 1 };
        assert!(spec(Axis::Q, vec![1.5]).validate().is_err());
        assert!(spec(Axis::ErP, vec![1.2]).validate().is_err());
        assert!(spec(Axis::S1, vec![]).validate().is_err());
        assert!(spec(Axis::EtaScale, vec![0.5, 2.0]).validate().is_ok());
    }

    #[test]
    fn replicates_get_distinct_graph_seeds() {
        let cfg = preset("pl-game").unwrap();
        let s = replicate_seeds(&cfg, 15);
        assert_eq!(s.len(), 15);
        let mut g: Vec<u64> = s.iter().map(|x| x.1).collect();
        g.sort();
        g.dedup();
        assert_eq!(g.len(), 15);
        assert_eq!(&s[..5].iter().map(|x| x.0).collect::<Vec<_>>(), &cfg.seeds);
    }

    #[test]
    fn axis_application() {
        let base = preset("pl-game").unwrap();
        let c = apply_axis(&base, Axis::ErP, 0.3, 9).unwrap();
        assert_eq!(c.graph, GraphConfig::ErdosRenyi { p: 0.3, seed: 9 });
        let c = apply_axis(&base, Axis::Agents, 20.0, 9).unwrap();
        assert_eq!(c.problem.agents(), Some(20));
        let c = apply_axis(&base, Axis::EtaScale, 3.0, 9).unwrap();
        assert!(matches!(c.algorithm.step, StepConfig::Theorem { scale, .. } if scale == 3.0));
        assert_eq!(apply_axis(&base, Axis::Q, 7.0, 0).unwrap().algorithm.q, 7);
    }
}
