use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prepinn_cli::check::{run_checks, CheckOptions};
use prepinn_cli::run::{run_file, sweep, Overrides};

#[derive(Parser)]
#[command(name = "prepinn", version, about = "Train physics-informed networks with a Jacobian-preconditioned loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct OverrideArgs {
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides { seed: a.seed, out: a.out, epochs: a.epochs }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the invariant self-checks.
    Check {
        #[arg(long, hide = true)]
        corrupt_ilu: bool,
    },
    /// Run every configuration matching a glob, one after another.
    Sweep {
        pattern: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => run_file(&config, &overrides.into()).map(|report| {
            println!(
                "final loss {:e}, relative L2 {:e}, written to {}",
                report.outcome.final_loss,
                report.outcome.final_rel_l2,
                report.files.first().and_then(|f| f.parent()).map_or_else(String::new, |d| d.display().to_string())
            );
        }),
        Command::Check { corrupt_ilu } => {
            let results = run_checks(CheckOptions { corrupt_ilu });
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", results.len());
                return ExitCode::FAILURE;
            }
            Ok(())
        }
        Command::Sweep { pattern, overrides } => sweep(&pattern, &overrides.into()).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
