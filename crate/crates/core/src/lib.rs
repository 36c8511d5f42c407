//! Simulation library for decentralized stochastic minimax optimization.
//!
//! A network of `M` agents jointly solves
//!
//! ```text
//! min_x max_y  f(x, y) = (1/M) * sum_i f_i(x, y)
//! ```
//!
//! where agent `i` only holds samples of its local objective `f_i` and talks to
//! its neighbours through a doubly stochastic mixing matrix. The main solver,
//! [`optimizer::step`], is a single-loop decentralized gradient descent ascent
//! with gradient tracking and SPIDER-type variance reduction; alternative
//! gradient estimators (plain SGD, STORM, exact gradients) plug into the same
//! loop as baselines.
//!
//! Module map:
//!
//! - [`network`]: topologies, mixing matrices, spectral gap.
//! - [`problems`]: the quadratic PL game and robust nonconvex regression,
//!   plus the LIBSVM reader.
//! - [`estimators`]: per-agent stochastic gradient estimators.
//! - [`optimizer`]: the iteration, step-size recipes and budget planning.
//! - [`metrics`]: stationarity, consensus and dual suboptimality measures.

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod stack;

pub use error::{Error, Result};
pub use estimators::{BatchSchedule, EstimatorKind, EstimatorState, Sampling};
pub use metrics::MetricsRecord;
pub use network::{MixingMatrix, Topology, ValidationReport};
pub use optimizer::{IterateState, RunOutput, RunPlan, StepSizes};
pub use problems::{
    MinimaxProblem, Problem, QuadraticGame, RobustRegression, SmoothnessConstants,
};
pub use stack::AgentStack;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
