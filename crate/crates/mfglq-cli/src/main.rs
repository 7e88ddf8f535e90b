//! Command-line front end: config loading, pipeline orchestration, the
//! built-in production-planning example, and CSV/SVG/JSON artifact emission.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 solvability or
//! divergence failure, 3 verification verdict failure (report still
//! written).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfglq::GameConfig;

#[derive(Parser)]
#[command(
    name = "mfglq",
    version,
    about = "Linear-quadratic mean-field game solver and verification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward Riccati systems and export the solution curves.
    Riccati {
        /// JSON problem description.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also solve the finite-population system for this agent count.
        #[arg(long)]
        n: Option<usize>,
        /// Override the grid step count (constant-coefficient configs only).
        #[arg(long)]
        steps: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate the decentralized population and export trajectories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the agent count.
        #[arg(long)]
        n: Option<usize>,
        /// Number of Monte Carlo scenarios.
        #[arg(long, default_value_t = 1)]
        scenarios: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Additionally write fixed-width binary trajectory dumps.
        #[arg(long)]
        binary: bool,
    },
    /// Run the verification battery and write a consolidated verdict.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Agent counts for the Monte Carlo studies.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        /// Agent counts for the deterministic gap study.
        #[arg(long, value_delimiter = ',')]
        gap_n_list: Option<Vec<usize>>,
        #[arg(long, default_value_t = 200)]
        scenarios: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fault-injection hook: shift the consistency-route terminal mean
        /// coefficient to watch the method-identity verdict fail.
        #[arg(long, hide = true)]
        perturb_cc_k: Option<f64>,
    },
    /// Built-in production-planning example: riccati + simulate + verify.
    ExampleProduction {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        scenarios: u64,
        /// Agent counts for the Monte Carlo studies.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
}

fn load_config(path: &PathBuf, steps: Option<usize>, seed: Option<u64>) -> mfglq::Result<GameConfig> {
    let mut cfg = GameConfig::from_json_file(path)?;
    if let Some(m) = steps {
        cfg = cfg.with_steps(m)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.ensure_valid()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version paths exit 0; usage errors exit 1.
            let kind = e.kind();
            let _ = e.print();
            use clap::error::ErrorKind;
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    let outcome = match cli.command {
        Command::Riccati { config, out, n, steps, seed } => load_config(&config, steps, seed)
            .and_then(|cfg| commands::run_riccati(&cfg, &out, n, Some(&config))),
        Command::Simulate { config, out, n, scenarios, steps, seed, binary } => {
            load_config(&config, steps, seed).and_then(|mut cfg| {
                if let Some(agents) = n {
                    cfg = cfg.with_agents(agents)?;
                }
                commands::run_simulate(&cfg, &out, scenarios, binary, Some(&config))
            })
        }
        Command::Verify { config, out, n_list, gap_n_list, scenarios, steps, seed, perturb_cc_k } => {
            load_config(&config, steps, seed).and_then(|cfg| {
                let opts = commands::VerifyOptions {
                    mc_counts: n_list,
                    gap_counts: gap_n_list,
                    scenarios,
                    perturb_cc_k,
                };
                commands::run_verify(&cfg, &out, opts, Some(&config))
            })
        }
        Command::ExampleProduction { out, n, steps, seed, scenarios, n_list } => {
            commands::run_example_production(&out, n, steps, seed, scenarios, n_list)
        }
    };

    match outcome {
        Ok(commands::RunOutcome::Pass) => ExitCode::SUCCESS,
        Ok(commands::RunOutcome::VerificationFailed) => {
            eprintln!("verification failed (see report)");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
