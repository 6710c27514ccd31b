//! `compsym` command-line front end.
//!
//! Exit codes: 0 success, 1 output i/o failure, 2 configuration error,
//! 3 build error, 4 a mathematical gate (certificate, sampled check,
//! small-gain, synthesis, closed-loop safety) failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "compsym", version, about = "Compositional abstraction and safety synthesis for switched networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Network description (TOML).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// State quantization parameter.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Internal-input quantization; 0 uses the neighbours' output images.
    #[arg(long, global = true)]
    varpi: Option<f64>,
    /// Exponent of the mode-dependent simulation function.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Dwell time applied to every subsystem.
    #[arg(long, global = true)]
    kd: Option<usize>,
    /// Splitters θ1,θ2,θ3 (positive, summing to less than or equal to 1).
    #[arg(long, global = true, value_parser = parse_theta)]
    theta: Option<[f64; 3]>,
    /// Samples per sampled verification; 0 skips them.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Closed-loop horizon.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Build explicit transition tables instead of evaluating lazily.
    #[arg(long, global = true)]
    materialize: bool,
    /// Also write DOT graphs.
    #[arg(long, global = true)]
    dot: bool,
    /// Number of links in the traffic ring.
    #[arg(long, global = true)]
    scale_links: Option<usize>,
    /// Traffic: compute one link and replicate it.
    #[arg(long, global = true)]
    symmetry: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and dump the finite abstraction of each subsystem.
    Abstract,
    /// Certify each subsystem and check its simulation function by sampling.
    Certify,
    /// Gain matrix, small-gain test and network certificate.
    Compose {
        /// Check a linear gain matrix from a TOML file (`slopes = [[..], ..]`) instead of a spec.
        #[arg(long)]
        gains: Option<PathBuf>,
    },
    /// Synthesize safety controllers and dump them.
    Synthesize,
    /// Closed-loop simulation with refined controllers.
    Simulate {
        /// Directory with `controller_<i>.ctl` dumps; synthesized afresh when absent.
        #[arg(long)]
        controllers: Option<PathBuf>,
    },
    /// End-to-end road-traffic ring pipeline.
    Traffic,
}

fn parse_theta(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated numbers".to_string())
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
    }
    let mut cfg = RunConfig {
        spec: cli.spec,
        eta: cli.eta,
        varpi: cli.varpi,
        epsilon: cli.epsilon,
        kd: cli.kd,
        theta: cli.theta,
        samples: cli.samples,
        steps: cli.steps,
        seed: cli.seed,
        out: cli.out,
        materialize: cli.materialize,
        dot: cli.dot,
        scale_links: cli.scale_links,
        symmetry: cli.symmetry,
        ..RunConfig::default()
    };
    match cli.command {
        Command::Abstract => commands::cmd_abstract(&cfg),
        Command::Certify => commands::cmd_certify(&cfg),
        Command::Compose { gains } => {
            cfg.gains = gains;
            commands::cmd_compose(&cfg)
        }
        Command::Synthesize => commands::cmd_synthesize(&cfg),
        Command::Simulate { controllers } => {
            cfg.controllers = controllers;
            commands::cmd_simulate(&cfg)
        }
        Command::Traffic => commands::cmd_traffic(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("ok: passed = {}", report["passed"]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("compsym: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
