//! Built-in experiment setups.

use std::path::PathBuf;

use anyhow::bail;
use decmm_core::Sampling;

use crate::config::{
    AlgorithmConfig, Budget, ExperimentConfig, GraphConfig, InitConfig, Method, ProblemConfig, StepConfig,
};

pub const PRESETS: [&str; 3] = ["pl-game", "robust-lr-a9a", "robust-lr-ijcnn1"];

/// Step-size multipliers applied to the theorem step sizes on the PL game.
/// Picked from a pilot grid; the theorem constants alone give steps around
/// 1e-4 on this instance.
pub const PL_STEP_SCALE: f64 = 50.0;
pub const PL_RATIO_SCALE: f64 = 100.0;

pub fn preset(name: &str) -> anyhow::Result<ExperimentConfig> {
    Ok(match name {
        "pl-game" => ExperimentConfig {
            name: name.into(),
            problem: ProblemConfig::PlGame {
                agents: 8,
                samples: 1000,
                dim: 25,
                alpha: 1.0,
                data_seed: 0,
            },
            graph: GraphConfig::Ring,
            algorithm: AlgorithmConfig {
                methods: vec![Method::Spider, Method::Sgd],
                s1: 100,
                s2: 1,
                q: 100,
                beta: None,
                storm_c: None,
                sampling: Sampling::Uniform,
                step: StepConfig::Theorem {
                    scale: PL_STEP_SCALE,
                    ratio_scale: PL_RATIO_SCALE,
                },
                parallel: false,
            },
            budget: Budget {
                epochs: Some(50.0),
                ..Budget::default()
            },
            seeds: vec![1, 2, 3, 4, 5],
            master_seed: None,
            replicates: None,
            log_every: 250,
            output: PathBuf::from("runs/pl-game"),
            init: InitConfig::Gaussian { scale: 1.0 },
        },
        "robust-lr-a9a" | "robust-lr-ijcnn1" => {
            let data = name.trim_start_matches("robust-lr-");
            ExperimentConfig {
                name: name.into(),
                problem: ProblemConfig::Libsvm {
                    path: PathBuf::from("data").join(data),
                    agents: 20,
                    dim_cap: None,
                    alpha: 1.0,
                },
                graph: GraphConfig::Ring,
                algorithm: AlgorithmConfig {
                    methods: vec![Method::Spider, Method::Sgd],
                    s1: 1000,
                    s2: 32,
                    q: 32,
                    beta: None,
                    storm_c: None,
                    sampling: Sampling::Uniform,
                    step: StepConfig::Theorem {
                        scale: 1000.0,
                        ratio_scale: 10.0,
                    },
                    parallel: true,
                },
                budget: Budget {
                    iterations: Some(5000),
                    ..Budget::default()
                },
                seeds: vec![1, 2, 3],
                master_seed: None,
                replicates: None,
                log_every: 50,
                output: PathBuf::from("runs").join(name),
                init: InitConfig::Gaussian { scale: 0.1 },
            }
        }
        other => bail!("unknown preset `{other}` (available: {})", PRESETS.join(", ")),
    })
}
