use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ncs_cli::commands::{self, Method, SimulateArgs, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "ncs", version, about = "Sparse observer-based control design for coupled LTI networks")]
struct Cli {
    /// Seed for random initial conditions.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design gains with as few control links as possible.
    Design {
        model: PathBuf,
        #[arg(long, value_enum, default_value = "linear")]
        variant: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-certify a stored design against its model.
    Check { model: PathBuf, design: PathBuf },
    /// Simulate the closed loop and audit the decay rate.
    Simulate {
        model: PathBuf,
        design: PathBuf,
        /// `random`, `zeros` or comma-separated values.
        #[arg(long, default_value = "random")]
        x0: String,
        /// Initial estimation error, same forms as `--x0`.
        #[arg(long, default_value = "zeros")]
        e0: String,
        /// Horizon in seconds.
        #[arg(long = "T", default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Decentralization bounds for the model.
    Decentralize { model: PathBuf },
    /// Three-cart pendulum benchmark against the published link patterns.
    BenchPendulum {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        cases: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Design { model, variant, out } => commands::design(model, *variant, out),
        Command::Check { model, design } => commands::check(model, design),
        Command::Simulate { model, design, x0, e0, horizon, dt, csv } => commands::simulate(SimulateArgs {
            model,
            design,
            x0,
            e0,
            horizon: *horizon,
            dt: *dt,
            csv: csv.as_deref(),
            seed: cli.seed,
        }),
        Command::Decentralize { model } => commands::decentralize(model),
        Command::BenchPendulum { cases } => {
            if let Some(c) = cases.iter().find(|c| !(1..=3).contains(*c)) {
                Err(anyhow::anyhow!("case {c} does not exist, choose from 1, 2, 3"))
            } else {
                commands::bench_pendulum(cases)
            }
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
