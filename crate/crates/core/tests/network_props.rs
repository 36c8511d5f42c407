use decmm_core::network::{build_erdos_renyi, build_ring, metropolis_weights, spectral_gap, ErdosRenyiOptions};
use decmm_core::AgentStack;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn er_mixing(agents: usize, p: f64, seed: u64) -> decmm_core::MixingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = build_erdos_renyi(agents, p, &mut rng, ErdosRenyiOptions::default()).unwrap();
    metropolis_weights(&topo).unwrap()
}

fn stack(agents: usize, width: usize, values: &[f64]) -> AgentStack {
    AgentStack::from_fn(agents, width, |i, j| values[(i * width + j) % values.len()] * (1.0 + i as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_matrices_validate(agents in 2usize..24, p in 0.05f64..1.0, seed in any::<u64>()) {
        let w = er_mixing(agents, p, seed);
        let report = w.validate();
        prop_assert!(report.passed(), "{report}");
        prop_assert!(report.max_row_deviation <= 1e-12);
        prop_assert!(report.max_col_deviation <= 1e-12);
        prop_assert!(report.symmetric);
        prop_assert!((spectral_gap(w.weights()).unwrap() - w.rho()).abs() <= 1e-12);
    }

    #[test]
    fn mixing_preserves_averages(
        agents in 2usize..16,
        p in 0.1f64..1.0,
        seed in any::<u64>(),
        values in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let w = er_mixing(agents, p, seed);
        let z = stack(agents, 5, &values);
        let mixed = w.mix(&z);
        for (a, b) in mixed.mean().iter().zip(z.mean()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mixing_contracts_disagreement(
        agents in 2usize..16,
        p in 0.1f64..1.0,
        seed in any::<u64>(),
        values in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let w = er_mixing(agents, p, seed);
        let z = stack(agents, 4, &values);
        let before = z.consensus_violation();
        let after = w.mix(&z).consensus_violation();
        prop_assert!(after <= w.rho().powi(2) * before + 1e-12 * (1.0 + before));
    }

    #[test]
    fn ring_rho_is_below_one(agents in 3usize..80) {
        let w = build_ring(agents).unwrap();
        prop_assert!(w.rho() < 1.0);
        prop_assert!(w.validate().passed());
    }
}
