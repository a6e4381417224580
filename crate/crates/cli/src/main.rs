use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qgemm_lab_cli::{bench, commands, CliError, Options};

#[derive(Parser)]
#[command(
    name = "qgemm-lab",
    version,
    about = "Simulated GPTQ 4-bit GEMM kernel laboratory"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Treat warnings (uninitialized shared reads) as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Flat absolute tolerance replacing the per-element error bounds.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded weights and write GQ4S files.
    Pack,
    /// Run the variant matrix and write report.csv and report.json.
    Run,
    /// Run the invariant suite.
    Verify {
        /// Stored GQ4S files to validate as well.
        #[arg(long = "weights")]
        weights: Vec<PathBuf>,
    },
    /// Re-render report.csv from a stored report.json.
    Report {
        /// Report to read; defaults to <out>/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let opts = Options {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        strict: cli.strict,
        tolerance: cli.tolerance,
        threads: bench::threads_from_env()?,
    };
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    match cli.command {
        Command::Pack => commands::pack(&opts, &mut stdout).map(drop),
        Command::Run => commands::run(&opts, &mut stdout, &mut stderr).map(drop),
        Command::Verify { weights } => commands::verify(&opts, &weights, &mut stdout).map(drop),
        Command::Report { input } => {
            commands::report(&opts, input.as_deref(), &mut stdout).map(drop)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
