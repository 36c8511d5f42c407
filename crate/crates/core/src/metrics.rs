//! Convergence measures evaluated on stacked iterates.
//!
//! With `xbar`, `ybar` the network averages:
//!
//! - consensus violation `||X_perp||_F^2 + ||Y_perp||_F^2`;
//! - PL-game stationarity `||sum_i grad_x f_i(xbar, y*(xbar))||^2 + consensus`
//!   (a sum over agents, not a mean);
//! - stationarity proxy `||sum_i grad f_i(xbar, ybar)||^2 + consensus` for
//!   problems without a closed-form best response;
//! - dual suboptimality `delta = ||y*(xbar) - ybar||^2`;
//! - `||grad Phi(xbar)|| = ||(1/M) sum_i grad_x f_i(xbar, y*(xbar))||`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::estimator_error;
use crate::linalg::norm_sq;
use crate::optimizer::IterateState;
use crate::problems::{MinimaxProblem, QuadraticGame};
use crate::stack::AgentStack;

pub fn consensus_violation(z: &AgentStack) -> f64 {
    z.consensus_violation()
}

fn averaged_split(game: &QuadraticGame, z: &AgentStack) -> (Vec<f64>, Vec<f64>) {
    let mean = z.mean();
    let d = game.dim_x();
    (mean[..d].to_vec(), mean[d..].to_vec())
}

/// `sum_i grad_x f_i(xbar, y*(xbar))`.
fn summed_primal_gradient(game: &QuadraticGame, xbar: &[f64]) -> Result<Vec<f64>> {
    let ystar = game.best_response(xbar)?;
    let mut sum = vec![0.0; xbar.len()];
    for i in 0..game.agents() {
        for (s, g) in sum.iter_mut().zip(game.local_grad_x(i, xbar, &ystar)) {
            *s += g;
        }
    }
    Ok(sum)
}

/// Stationarity violation reported for the PL game.
pub fn stationarity_pl(game: &QuadraticGame, z: &AgentStack) -> Result<f64> {
    let (xbar, _) = averaged_split(game, z);
    let g = summed_primal_gradient(game, &xbar)?;
    Ok(norm_sq(&g) + z.consensus_violation())
}

/// [`stationarity_pl`] with the agent mean in place of the sum, i.e.
/// `||grad Phi(xbar)||^2 + consensus`.
pub fn stationarity_pl_normalized(game: &QuadraticGame, z: &AgentStack) -> Result<f64> {
    let (xbar, _) = averaged_split(game, z);
    Ok(grad_phi_norm(game, &xbar)?.powi(2) + z.consensus_violation())
}

/// Full-gradient stationarity proxy at the averaged point.
pub fn stationarity_proxy<P: MinimaxProblem + ?Sized>(problem: &P, z: &AgentStack) -> f64 {
    let zbar = z.mean();
    let mut sum = vec![0.0; zbar.len()];
    let mut g = vec![0.0; zbar.len()];
    for i in 0..problem.agents() {
        problem.local_grad(i, &zbar, &mut g);
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    norm_sq(&sum) + z.consensus_violation()
}

/// `delta = ||y*(xbar) - ybar||^2`.
pub fn dual_suboptimality(game: &QuadraticGame, z: &AgentStack) -> Result<f64> {
    let (xbar, ybar) = averaged_split(game, z);
    let ystar = game.best_response(&xbar)?;
    Ok(ystar.iter().zip(&ybar).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `||grad Phi(xbar)||` by Danskin's theorem.
pub fn grad_phi_norm(game: &QuadraticGame, xbar: &[f64]) -> Result<f64> {
    let g = summed_primal_gradient(game, xbar)?;
    Ok(norm_sq(&g).sqrt() / game.agents() as f64)
}

/// One logged point of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: usize,
    /// Sample draws over all agents divided by the total dataset size.
    pub epoch: f64,
    /// Per-agent sample draws (identical across agents).
    pub oracle_calls: u64,
    pub comm_rounds: usize,
    pub stationarity: f64,
    pub consensus: f64,
    pub dual_subopt: Option<f64>,
    pub grad_phi_norm: Option<f64>,
    pub est_error: f64,
    /// Seconds since the start of the run. Not written to CSV.
    #[serde(default)]
    pub wall_time: f64,
}

impl MetricsRecord {
    fn fields(&self) -> [Option<f64>; 5] {
        [
            Some(self.stationarity),
            Some(self.consensus),
            self.dual_subopt,
            self.grad_phi_norm,
            Some(self.est_error),
        ]
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.epoch.is_finite()
            && self
                .fields()
                .iter()
                .flatten()
                .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Evaluate every metric defined for `problem` at the current state.
pub fn snapshot<P: MinimaxProblem + ?Sized>(
    problem: &P,
    state: &IterateState,
    wall_time: f64,
) -> Result<MetricsRecord> {
    let z = state.z();
    let calls = state.estimator().oracle_calls();
    let total: u64 = calls.iter().sum();
    let (stationarity, dual, phi) = match problem.as_quadratic() {
        Some(game) => {
            let (xbar, _) = averaged_split(game, z);
            (
                stationarity_pl(game, z)?,
                Some(dual_suboptimality(game, z)?),
                Some(grad_phi_norm(game, &xbar)?),
            )
        }
        None => (stationarity_proxy(problem, z), None, None),
    };
    Ok(MetricsRecord {
        t: state.t(),
        epoch: total as f64 / problem.total_samples() as f64,
        oracle_calls: calls.iter().copied().max().unwrap_or(0),
        comm_rounds: state.comm_rounds(),
        stationarity,
        consensus: z.consensus_violation(),
        dual_subopt: dual,
        grad_phi_norm: phi,
        est_error: estimator_error(state.estimator(), problem, z)?,
        wall_time,
    })
}

/// CSV columns in output order; `dual_subopt` and `grad_phi_norm` appear only
/// when the trajectory defines them.
pub fn csv_header(records: &[MetricsRecord]) -> Vec<&'static str> {
    let dual = records.first().is_some_and(|r| r.dual_subopt.is_some());
    let phi = records.first().is_some_and(|r| r.grad_phi_norm.is_some());
    let mut h = vec!["t", "epoch", "oracle_calls", "comm_rounds", "stationarity", "consensus"];
    if dual {
        h.push("dual_subopt");
    }
    if phi {
        h.push("grad_phi_norm");
    }
    h.push("est_error");
    h
}

/// Write a trajectory as CSV. Floats use shortest round-trip formatting, so
/// output is byte-identical for identical trajectories.
pub fn write_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> Result<()> {
    let header = csv_header(records);
    writeln!(w, "{}", header.join(","))?;
    let dual = header.contains(&"dual_subopt");
    let phi = header.contains(&"grad_phi_norm");
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{}",
            r.t, r.epoch, r.oracle_calls, r.comm_rounds, r.stationarity, r.consensus
        )?;
        if dual {
            write!(w, ",{}", r.dual_subopt.unwrap_or(f64::NAN))?;
        }
        if phi {
            write!(w, ",{}", r.grad_phi_norm.unwrap_or(f64::NAN))?;
        }
        writeln!(w, ",{}", r.est_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_ring;
    use crate::problems::generate_pl_game;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn game() -> QuadraticGame {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        generate_pl_game(4, 30, 5, 1.0, &mut rng).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn consensus_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = AgentStack::from_fn(6, 7, |_, _| rng.sample(StandardNormal));
        let mean = z.mean();
        let mut oracle = 0.0;
        for i in 0..6 {
            for k in 0..7 {
                oracle += (z.get(i, k) - mean[k]).powi(2);
            }
        }
        assert!((consensus_violation(&z) - oracle).abs() < 1e-12);
    }

    #[test]
    fn stationarity_vanishes_at_saddle() {
        let g = game();
        let z = AgentStack::zeros(4, 10);
        assert!(stationarity_pl(&g, &z).unwrap() <= 1e-16);
        assert!(dual_suboptimality(&g, &z).unwrap() == 0.0);
        assert!(grad_phi_norm(&g, &[0.0; 5]).unwrap() == 0.0);
    }

    #[test]
    fn sum_form_is_m_squared_times_mean_form() {
        let g = game();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = randn(&mut rng, 10);
        let z = AgentStack::broadcast(4, &row);
        let s = stationarity_pl(&g, &z).unwrap();
        let phi = grad_phi_norm(&g, &row[..5]).unwrap();
        assert!((s - 16.0 * phi * phi).abs() <= 1e-10 * s);
        let n = stationarity_pl_normalized(&g, &z).unwrap();
        assert!((n - phi * phi).abs() <= 1e-12 * n.max(1.0));
    }

    #[test]
    fn perturbing_one_agent_increases_stationarity() {
        let g = game();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = randn(&mut rng, 10);
        let z = AgentStack::broadcast(4, &row);
        let mut zp = z.clone();
        zp.row_mut(2)[0] += 0.5;
        zp.row_mut(2)[7] -= 0.5;
        assert!(zp.consensus_violation() > z.consensus_violation());
        assert!(
            stationarity_pl(&g, &zp).unwrap() >= zp.consensus_violation(),
            "stationarity contains the consensus terms"
        );
    }

    #[test]
    fn dual_suboptimality_examples() {
        let g = game();
        let mut row = vec![0.0; 10];
        row[5] = 1.0;
        let z = AgentStack::broadcast(4, &row);
        assert!((dual_suboptimality(&g, &z).unwrap() - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, 5);
        let ystar = g.best_response(&x).unwrap();
        let mut u = randn(&mut rng, 5);
        let un = norm_sq(&u).sqrt();
        u.iter_mut().for_each(|v| *v *= 0.1 / un);
        let mut row = x.clone();
        row.extend(ystar.iter().zip(&u).map(|(a, b)| a + b));
        let z = AgentStack::broadcast(4, &row);
        assert!((dual_suboptimality(&g, &z).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn single_agent_proxy_is_gradient_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = generate_pl_game(1, 20, 3, 1.0, &mut rng).unwrap();
        let row = randn(&mut rng, 6);
        let z = AgentStack::from_rows(&[row.clone()]).unwrap();
        let mut grad = vec![0.0; 6];
        g.local_grad(0, &row, &mut grad);
        assert!((stationarity_proxy(&g, &z) - norm_sq(&grad)).abs() < 1e-12);
    }

    #[test]
    fn mixing_contracts_consensus() {
        let w = build_ring(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let z = AgentStack::from_fn(4, 5, |_, _| rng.sample(StandardNormal));
            let wz = w.mix(&z);
            assert!(
                consensus_violation(&wz) <= w.rho().powi(2) * consensus_violation(&z) + 1e-12
            );
        }
    }

    #[test]
    fn csv_header_drops_undefined_columns() {
        let r = MetricsRecord {
            t: 0,
            epoch: 0.0,
            oracle_calls: 0,
            comm_rounds: 0,
            stationarity: 1.0,
            consensus: 0.0,
            dual_subopt: None,
            grad_phi_norm: None,
            est_error: 0.5,
            wall_time: 0.0,
        };
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,epoch,oracle_calls,comm_rounds,stationarity,consensus,est_error\n0,0,0,0,1,0,0.5\n"
        );
    }
}
