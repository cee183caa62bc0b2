use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ge_remote_cli::commands::{self, PolicySource};
use ge_remote_cli::{exit_code, Overrides};

#[derive(Parser)]
#[command(name = "ge-remote", version, about = "Remote estimation over a Gilbert-Elliott channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in instance instead of a config file: calibration, random-walk.
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Output directory (default: config, then $GE_REMOTE_OUT, then ge-remote-out).
    /// One subdirectory per command is created inside.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            lambda: self.lambda,
            horizon: self.horizon,
            n_reps: self.n_reps,
            n_points: self.n_points,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Backward induction and threshold extraction for an AR(1) source.
    SolveThreshold(Common),
    /// Reachable-belief dynamic program for a finite source.
    SolveFinite(Common),
    /// Monte Carlo cost of a policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `dp`, `never`, `always`, or a thresholds.json file.
        #[arg(long, default_value = "dp")]
        policy: PolicySource,
        /// value.json (or any JSON number) to compare the estimate against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Exhaustive strategy search on a tiny finite instance.
    Oracle(Common),
    /// Solve and simulate over a list of lambdas.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Property and consistency checks on one instance.
    Check(Common),
}

fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let (name, common) = match &cli.command {
        Command::SolveThreshold(c) => ("solve-threshold", c),
        Command::SolveFinite(c) => ("solve-finite", c),
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Oracle(c) => ("oracle", c),
        Command::Sweep { common, .. } => ("sweep", common),
        Command::Check(c) => ("check", c),
    };
    let cfg = commands::load(common.config.as_deref(), common.instance.as_deref(), &common.overrides())?;
    let mut out = commands::output_for(&cfg, name)?;
    let mut lines = match &cli.command {
        Command::SolveThreshold(_) => commands::cmd_solve_threshold(&cfg, &mut out)?,
        Command::SolveFinite(_) => commands::cmd_solve_finite(&cfg, &mut out)?,
        Command::Simulate { policy, reference, .. } => commands::cmd_simulate(&cfg, &mut out, policy, reference.as_deref())?,
        Command::Oracle(_) => commands::cmd_oracle(&cfg, &mut out)?,
        Command::Sweep { lambdas, .. } => commands::cmd_sweep(&cfg, &mut out, lambdas.as_deref())?,
        Command::Check(_) => commands::cmd_check(&cfg, &mut out)?,
    };
    lines.push(format!("wrote {}", out.path.display()));
    Ok(lines)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
