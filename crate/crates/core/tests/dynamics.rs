mod common;

use common::{game, random_stack, regression};
use decmm_core::metrics::{dual_suboptimality, grad_phi_norm, write_csv};
use decmm_core::network::{build_ring, MixingMatrix};
use decmm_core::optimizer::{run, step};
use decmm_core::rng::batch_indices;
use decmm_core::{
    AgentStack, BatchSchedule, EstimatorKind, IterateState, MinimaxProblem, RunPlan, Sampling, StepSizes,
};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn averages_follow_centralized_gda() {
    let g = game(1, 6, 80, 5);
    let w = build_ring(6).unwrap();
    let z0 = random_stack(2, 6, 10);
    let schedule = BatchSchedule::new(8, 2, 5).unwrap();
    let eta = StepSizes::new(0.01, 0.05).unwrap();
    let mut st = IterateState::init(&g, &w, &z0, EstimatorKind::Spider, schedule, Sampling::Uniform, 3).unwrap();
    let (mut track, mut avg) = (0.0_f64, 0.0_f64);
    for _ in 0..2000 {
        track = track.max(max_abs_diff(&st.d().mean(), &st.v().mean()));
        let zbar = st.z().mean();
        let vbar = st.v().mean();
        step(&mut st, &w, eta, &g).unwrap();
        let next = st.z().mean();
        for k in 0..10 {
            let want = if k < 5 {
                zbar[k] - eta.eta_x * vbar[k]
            } else {
                zbar[k] + eta.eta_y * vbar[k]
            };
            avg = avg.max((next[k] - want).abs());
        }
    }
    assert!(track <= 1e-8, "tracking drift {track:.3e}");
    assert!(avg <= 1e-8, "average update drift {avg:.3e}");
}

/// Single-agent SPIDER-GDA written directly against the sample oracle.
fn reference_spider_gda<P: MinimaxProblem>(
    p: &P,
    z0: &[f64],
    eta: StepSizes,
    schedule: BatchSchedule,
    seed: u64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let n = p.local_samples(0);
    let k = p.dim();
    let dx = p.dim_x();
    let mut z = z0.to_vec();
    let mut v = vec![0.0; k];
    p.batch_grad(0, &z, &batch_indices(seed, 0, 0, n, schedule.s1), &mut v);
    let mut path = vec![z.clone()];
    let (mut g_new, mut g_old) = (vec![0.0; k], vec![0.0; k]);
    for t in 0..steps {
        let old = z.clone();
        for c in 0..k {
            if c < dx {
                z[c] -= eta.eta_x * v[c];
            } else {
                z[c] += eta.eta_y * v[c];
            }
        }
        if t % schedule.q == 0 {
            p.batch_grad(0, &z, &batch_indices(seed, 0, t + 1, n, schedule.s1), &mut v);
        } else {
            let batch = batch_indices(seed, 0, t + 1, n, schedule.s2);
            p.batch_grad(0, &z, &batch, &mut g_new);
            p.batch_grad(0, &old, &batch, &mut g_old);
            for c in 0..k {
                v[c] = (g_new[c] - g_old[c]) + v[c];
            }
        }
        path.push(z.clone());
    }
    path
}

fn check_centralized<P: MinimaxProblem>(p: &P, eta: StepSizes) {
    let w = MixingMatrix::trivial();
    let z0 = random_stack(4, 1, p.dim());
    let schedule = BatchSchedule::new(16, 3, 7).unwrap();
    let reference = reference_spider_gda(p, z0.row(0), eta, schedule, 9, 1000);
    let mut st = IterateState::init(p, &w, &z0, EstimatorKind::Spider, schedule, Sampling::Uniform, 9).unwrap();
    for want in &reference[1..] {
        step(&mut st, &w, eta, p).unwrap();
        assert_eq!(st.z().row(0), &want[..], "diverged from reference at t = {}", st.t());
        assert_eq!(st.d().as_slice(), st.v().as_slice());
    }
}

#[test]
fn single_agent_matches_reference_bitwise() {
    check_centralized(&game(5, 1, 100, 4), StepSizes::new(0.02, 0.05).unwrap());
    check_centralized(&regression(6, 1, 100, 4), StepSizes::new(0.05, 0.05).unwrap());
}

#[test]
fn exact_ascent_contracts_dual_gap() {
    let g = game(7, 3, 60, 5);
    let c = g.constants().unwrap();
    let z = random_stack(8, 1, 10);
    let (x, y0) = z.row(0).split_at(5);
    let mut y = y0.to_vec();
    let factor = (1.0 - c.mu / c.l).powi(2);
    for _ in 0..20 {
        let before = dual_suboptimality(&g, &stack_of(x, &y)).unwrap();
        let mut grad = vec![0.0; 5];
        for i in 0..3 {
            let mut out = vec![0.0; 10];
            g.local_grad(i, &[x, &y[..]].concat(), &mut out);
            for k in 0..5 {
                grad[k] += out[5 + k] / 3.0;
            }
        }
        for k in 0..5 {
            y[k] += grad[k] / c.l;
        }
        let after = dual_suboptimality(&g, &stack_of(x, &y)).unwrap();
        assert!(after < before);
        assert!(after <= factor * before * (1.0 + 1e-9));
    }
}

fn stack_of(x: &[f64], y: &[f64]) -> AgentStack {
    AgentStack::from_rows(&[[x, y].concat()]).unwrap()
}

#[test]
fn exact_gda_decreases_primal_gradient_like_reference() {
    let g = game(9, 1, 60, 4);
    let w = MixingMatrix::trivial();
    let z0 = random_stack(10, 1, 8);
    let eta = StepSizes::new(0.005, 0.1).unwrap();
    let schedule = BatchSchedule::new(1, 1, 1).unwrap();
    let mut st = IterateState::init(&g, &w, &z0, EstimatorKind::Exact, schedule, Sampling::Uniform, 0).unwrap();

    let mut z = z0.row(0).to_vec();
    let mut grad = vec![0.0; 8];
    // Let y catch up with y*(x) first; x barely moves meanwhile.
    for t in 0..400 {
        g.local_grad(0, &z, &mut grad);
        for k in 0..8 {
            z[k] += if k < 4 { -eta.eta_x } else { eta.eta_y } * grad[k];
        }
        step(&mut st, &w, eta, &g).unwrap();
        assert!(max_abs_diff(st.z().row(0), &z) <= 1e-12, "t = {t}");
    }
    let mut last = grad_phi_norm(&g, &z[..4]).unwrap();
    for _ in 0..200 {
        step(&mut st, &w, eta, &g).unwrap();
        let now = grad_phi_norm(&g, &st.z().row(0)[..4]).unwrap();
        assert!(now < last);
        last = now;
    }
}

#[test]
fn pure_gossip_contracts_at_rate_rho() {
    let g = game(11, 8, 30, 3);
    let w = build_ring(8).unwrap();
    let z0 = random_stack(12, 8, 6);
    let mut st = IterateState::init(&g, &w, &z0, EstimatorKind::Sgd, BatchSchedule::new(1, 1, 1).unwrap(), Sampling::Uniform, 1).unwrap();
    let zero = StepSizes::new(0.0, 0.0).unwrap();
    for _ in 0..100 {
        let before = st.z().consensus_violation().sqrt();
        let mean = st.z().mean();
        step(&mut st, &w, zero, &g).unwrap();
        assert!(st.z().consensus_violation().sqrt() <= w.rho() * before + 1e-12);
        assert!(max_abs_diff(&st.z().mean(), &mean) <= 1e-12);
    }
}

#[test]
fn counters_match_schedule() {
    let g = game(13, 4, 50, 3);
    let w = build_ring(4).unwrap();
    let z0 = random_stack(14, 4, 6);
    for (t_max, q) in [(0, 3), (1, 3), (10, 3), (12, 4), (25, 7), (40, 1)] {
        let schedule = BatchSchedule::new(9, 2, q).unwrap();
        let plan = RunPlan::new(t_max, StepSizes::new(0.01, 0.01).unwrap(), schedule, EstimatorKind::Spider);
        let out = run(&plan, &g, &w, &z0, 5, 1).unwrap();
        let st = &out.final_state;
        let refresh = t_max.div_ceil(q);
        assert_eq!(st.comm_rounds(), t_max);
        assert_eq!(st.estimator().refresh_steps(), refresh);
        let want = (refresh * 9 + (t_max - refresh) * 2) as u64;
        assert!(st.estimator().loop_oracle_calls().iter().all(|&c| c == want));
        assert!(st.estimator().oracle_calls().iter().all(|&c| c == want + 9));
        assert_eq!(out.trajectory.len(), t_max + 1);
        assert_eq!(out.trajectory.last().unwrap().comm_rounds, t_max);
    }
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let g = game(15, 5, 60, 4);
    let w = build_ring(5).unwrap();
    let z0 = random_stack(16, 5, 8);
    let mut plan = RunPlan::new(300, StepSizes::new(0.01, 0.02).unwrap(), BatchSchedule::new(10, 2, 6).unwrap(), EstimatorKind::Spider);
    let a = run(&plan, &g, &w, &z0, 77, 10).unwrap();
    let b = run(&plan, &g, &w, &z0, 77, 10).unwrap();
    plan.parallel = true;
    let c = run(&plan, &g, &w, &z0, 77, 10).unwrap();
    let strip = |o: &decmm_core::RunOutput| {
        let mut buf = Vec::new();
        write_csv(&o.trajectory, &mut buf).unwrap();
        buf
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a), strip(&c));
    assert_eq!(a.tau, b.tau);
    assert_eq!(a.output, b.output);
    assert_eq!(a.final_state.z(), c.final_state.z());
    let d = run(&plan, &g, &w, &z0, 78, 10).unwrap();
    assert_ne!(a.final_state.z(), d.final_state.z());
}

#[test]
fn output_iterate_is_the_state_at_tau() {
    let g = game(17, 3, 40, 3);
    let w = build_ring(3).unwrap();
    let z0 = random_stack(18, 3, 6);
    let plan = RunPlan::new(50, StepSizes::new(0.01, 0.02).unwrap(), BatchSchedule::new(5, 1, 5).unwrap(), EstimatorKind::Spider);
    let out = run(&plan, &g, &w, &z0, 3, 50).unwrap();
    assert!(out.tau < 50);
    let mut st = IterateState::init(&g, &w, &z0, plan.estimator, plan.schedule, plan.sampling, 3).unwrap();
    for _ in 0..out.tau {
        step(&mut st, &w, plan.step, &g).unwrap();
    }
    assert_eq!(st.z(), &out.output);
}

#[test]
fn regression_trajectory_omits_dual_columns() {
    let p = regression(19, 4, 50, 5);
    let w = build_ring(4).unwrap();
    let z0 = random_stack(20, 4, 10);
    let plan = RunPlan::new(20, StepSizes::new(0.05, 0.05).unwrap(), BatchSchedule::new(10, 4, 4).unwrap(), EstimatorKind::Spider);
    let out = run(&plan, &p, &w, &z0, 1, 5).unwrap();
    let mut buf = Vec::new();
    write_csv(&out.trajectory, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,epoch,oracle_calls,comm_rounds,stationarity,consensus,est_error\n"));
    assert_eq!(text.lines().count(), 1 + 5);
    assert!(out.trajectory.iter().all(|r| r.is_finite_nonnegative()));
    assert!(out.trajectory[0].stationarity > 0.0);
}
