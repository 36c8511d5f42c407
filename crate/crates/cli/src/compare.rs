//! Method comparison at a matched per-agent oracle budget.

use std::fmt;

use anyhow::bail;
use decmm_core::{BatchSchedule, MinimaxProblem};
use decmm_core::optimizer::iterations_for_budget;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::harness::{draws_for, oracle_budget, run_one, step_sizes, write_atomic, RunResult, Setup};
use crate::stats::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub iterations: usize,
    /// Per-agent draws actually spent, initialization included.
    pub draws: u64,
    pub median_stationarity: f64,
    /// Final stationarity per seed, `inf` for diverged runs.
    pub stationarity: Vec<f64>,
    pub diverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// Per-agent draw budget all methods were matched to.
    pub budget: u64,
    /// Whether configured iteration budgets had to be normalized.
    pub normalized: bool,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodReport>,
    /// `wins[a][b]`: seeds where method `a` ends strictly below method `b`.
    pub wins: Vec<Vec<usize>>,
}

impl CompareReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Seeds on which `a` ends at or below `b`.
    pub fn paired_no_worse(&self, a: Method, b: Method) -> usize {
        let (Some(ra), Some(rb)) = (self.method(a), self.method(b)) else {
            return 0;
        };
        ra.stationarity
            .iter()
            .zip(&rb.stationarity)
            .filter(|(x, y)| x <= y)
            .count()
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "matched budget: {} draws per agent{} over {} seeds",
            self.budget,
            if self.normalized { " (normalized to the smallest)" } else { "" },
            self.seeds.len()
        )?;
        writeln!(f, "{:<8} {:>10} {:>12} {:>14} {:>9}", "method", "T", "draws", "median stat", "diverged")?;
        for r in &self.methods {
            writeln!(
                f,
                "{:<8} {:>10} {:>12} {:>14.4e} {:>9}",
                r.method.name(),
                r.iterations,
                r.draws,
                r.median_stationarity,
                r.diverged
            )?;
        }
        writeln!(f, "wins (row beats column):")?;
        write!(f, "{:<8}", "")?;
        for r in &self.methods {
            write!(f, " {:>8}", r.method.name())?;
        }
        writeln!(f)?;
        for (a, row) in self.methods.iter().zip(&self.wins) {
            write!(f, "{:<8}", a.method.name())?;
            for w in row {
                write!(f, " {w:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Iterations per method so every method spends the same per-agent budget.
fn matched_iterations(cfg: &ExperimentConfig, setup: &Setup, methods: &[Method]) -> anyhow::Result<(u64, bool, Vec<usize>)> {
    let p = &setup.problem;
    let a = &cfg.algorithm;
    let schedule = BatchSchedule::new(a.s1, a.s2, a.q)?;
    let eta = step_sizes(a.step, p, setup.mixing.rho())?;
    let kinds: Vec<_> = methods.iter().map(|&m| a.estimator(m, eta.eta_y)).collect();
    let n = (0..p.agents()).map(|i| p.local_samples(i)).max().unwrap_or(0);
    let (budget, normalized) = match (cfg.budget.iterations, oracle_budget(&cfg.budget, p)) {
        (None, Some(b)) => (b, false),
        (Some(t), _) => {
            let draws: Vec<u64> = kinds.iter().map(|&k| draws_for(k, schedule, cfg, p, t)).collect();
            let min = *draws.iter().min().expect("at least two methods");
            let mismatched = draws.iter().any(|&d| d != min);
            if mismatched {
                log::warn!(
                    "iteration budget T = {t} gives unequal oracle budgets {draws:?}; normalizing to {min} draws per agent"
                );
            }
            (min, mismatched)
        }
        (None, None) => bail!("budget: no budget set"),
    };
    let iters = kinds
        .iter()
        .map(|&k| iterations_for_budget(k, schedule, a.sampling, n, budget))
        .collect();
    Ok((budget, normalized, iters))
}

/// Run `methods` on every seed of `cfg` at a matched oracle budget.
pub fn compare_methods(cfg: &ExperimentConfig, methods: &[Method]) -> anyhow::Result<(CompareReport, Vec<RunResult>)> {
    let mut uniq: Vec<Method> = Vec::new();
    for &m in methods {
        if !uniq.contains(&m) {
            uniq.push(m);
        }
    }
    if uniq.len() < 2 {
        bail!("≥2 methods required, got {}", uniq.len());
    }
    let setup = Setup::new(cfg)?;
    let (budget, normalized, iters) = matched_iterations(cfg, &setup, &uniq)?;
    let seeds = cfg.run_seeds();
    let jobs: Vec<(usize, u64)> = (0..uniq.len()).flat_map(|k| seeds.iter().map(move |&s| (k, s))).collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(k, s)| run_one(cfg, &setup, uniq[k], s, Some(iters[k])))
        .collect::<anyhow::Result<_>>()?;

    let mut reports = Vec::new();
    for (k, &m) in uniq.iter().enumerate() {
        let mine: Vec<&RunResult> = results.iter().filter(|r| r.method == m).collect();
        let stationarity: Vec<f64> = mine
            .iter()
            .map(|r| if r.diverged_at.is_some() { f64::INFINITY } else { r.last().stationarity })
            .collect();
        reports.push(MethodReport {
            method: m,
            iterations: iters[k],
            draws: mine.first().map_or(0, |r| r.last().oracle_calls),
            median_stationarity: median(&stationarity),
            diverged: mine.iter().filter(|r| r.diverged_at.is_some()).count(),
            stationarity,
        });
    }
    let wins = reports
        .iter()
        .map(|a| {
            reports
                .iter()
                .map(|b| a.stationarity.iter().zip(&b.stationarity).filter(|(x, y)| x < y).count())
                .collect()
        })
        .collect();
    let report = CompareReport {
        budget,
        normalized,
        seeds,
        methods: reports,
        wins,
    };
    let dir = cfg.output.join("compare");
    for r in &results {
        write_atomic(&dir.join(r.csv_name()), &r.csv_bytes())?;
    }
    write_atomic(&cfg.output.join("compare.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok((report, results))
}
