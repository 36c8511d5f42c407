use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use decmm::config::GraphConfig;
use decmm::sweep::mean_rho_by_value;
use decmm::{compare_methods, preset, run_experiment, run_sensitivity, Axis, ExperimentConfig, Method, SweepSpec};
use decmm_core::network::{validate_weights, GraphSpec};

#[derive(Parser)]
#[command(name = "decmm", version, about = "Decentralized stochastic minimax experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and seed; write CSVs and summary.json.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sensitivity sweep over one axis.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// One of er_p, M, S1, S2, q, eta_scale.
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Replicates per value (default: number of configured seeds).
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare methods at a matched oracle budget.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a JSON graph spec for the mixing-matrix properties.
    ValidateGraph { spec: PathBuf },
    /// Print a preset as TOML.
    Preset { name: String },
}

#[derive(Args)]
struct Source {
    /// Config file (TOML or JSON).
    config: Option<PathBuf>,
    /// Built-in preset: pl-game, robust-lr-a9a, robust-lr-ijcnn1.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::load(path),
            (None, Some(name)) => preset(name),
            _ => bail!("give a config file or --preset"),
        }
    }
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, conflicts_with = "epochs")]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<f64>,
    /// ring, complete, path, erdos-renyi, or a JSON graph spec file.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    er_p: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    graph_seed: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(t) = self.iterations {
            cfg.budget = decmm::config::Budget {
                iterations: Some(t),
                ..Default::default()
            };
        }
        if let Some(e) = self.epochs {
            cfg.budget = decmm::config::Budget {
                epochs: Some(e),
                ..Default::default()
            };
        }
        if let Some(m) = self.agents {
            cfg.problem.set_agents(m)?;
        }
        if let Some(l) = self.log_every {
            cfg.log_every = l;
        }
        let current_seed = match cfg.graph {
            GraphConfig::ErdosRenyi { seed, .. } => seed,
            _ => 0,
        };
        if let Some(g) = &self.graph {
            cfg.graph = match g.as_str() {
                "ring" => GraphConfig::Ring,
                "complete" => GraphConfig::Complete,
                "path" => GraphConfig::Path,
                "erdos-renyi" | "er" => GraphConfig::ErdosRenyi {
                    p: self.er_p.context("--graph erdos-renyi needs --er-p")?,
                    seed: self.graph_seed.unwrap_or(current_seed),
                },
                file => GraphConfig::File { path: file.into() },
            };
        } else if let Some(p) = self.er_p {
            cfg.graph = GraphConfig::ErdosRenyi {
                p,
                seed: self.graph_seed.unwrap_or(current_seed),
            };
        }
        if let (Some(s), GraphConfig::ErdosRenyi { seed, .. }) = (self.graph_seed, &mut cfg.graph) {
            *seed = s;
        }
        cfg.validate()?;
        Ok(())
    }
}

fn load(source: &Source, overrides: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = source.load()?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { source, overrides } => {
            let cfg = load(&source, &overrides)?;
            let out = run_experiment(&cfg)?;
            for (name, stats) in &out.summary.methods {
                let med = stats.stationarity.map_or(f64::NAN, |s| s.median);
                println!(
                    "{name:<8} runs {:>3}  diverged {:>3}  median final stationarity {med:.4e}",
                    stats.runs, stats.diverged
                );
            }
            println!("wrote {} CSVs and {}", out.csv_paths.len(), out.summary_path.display());
        }
        Command::Sweep {
            source,
            axis,
            values,
            replicates,
            overrides,
        } => {
            let cfg = load(&source, &overrides)?;
            let spec = SweepSpec {
                axis,
                values,
                replicates: replicates.unwrap_or(cfg.run_seeds().len()),
            };
            let out = run_sensitivity(&cfg, &spec)?;
            for (v, rho) in mean_rho_by_value(&out.rows) {
                println!("{axis} = {v}: mean rho {rho:.4}");
            }
            println!("wrote {} rows to {}", out.rows.len(), out.csv_path.display());
        }
        Command::Compare {
            source,
            methods,
            overrides,
        } => {
            let cfg = load(&source, &overrides)?;
            let (report, _) = compare_methods(&cfg, &methods)?;
            print!("{report}");
        }
        Command::ValidateGraph { spec } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let (w, topo) = GraphSpec::from_json(&text)?.weights_and_topology()?;
            let report = validate_weights(&w, topo.as_ref());
            println!("{report}");
            if !report.passed() {
                eprintln!("failed: {}", report.failures().join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Preset { name } => print!("{}", preset(&name)?.to_toml()?),
    }
    Ok(ExitCode::SUCCESS)
}
