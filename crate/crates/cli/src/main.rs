use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lapbem_cli::check::run_checks;
use lapbem_cli::{merge_histories, run, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "lapbem", version, about = "Galerkin BEM experiments for the 2D Laplace operators")]
struct Cli {
    /// Directory for run artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed of randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Merge convergence histories on the level key and recompute EOC.
    Table {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Run the randomized property checks.
    Check,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run { config } => {
            let opts = RunOptions {
                out_dir: cli.out_dir.clone(),
                seed: cli.seed,
                quiet: cli.quiet,
            };
            let outcome = run(config, &opts)?;
            if !cli.quiet {
                print!("{}", outcome.summary);
                println!("manifest: {}", outcome.manifest.display());
            }
            Ok(())
        }
        Command::Table { csv } => {
            print!("{}", merge_histories(csv)?.to_csv());
            Ok(())
        }
        Command::Check => {
            let seed = cli.seed.unwrap_or(0);
            let results = run_checks(seed);
            let failed = results.iter().filter(|r| !r.passed).count();
            for r in &results {
                if r.passed {
                    if !cli.quiet {
                        println!("PASS {} ({:.2} s)", r.name, r.seconds);
                    }
                } else {
                    println!("FAIL {}: {}", r.name, r.detail);
                }
            }
            if !cli.quiet {
                println!("seed {seed}: {} passed, {failed} failed", results.len() - failed);
            }
            if failed > 0 {
                Err(CliError::Checks(failed))
            } else {
                Ok(())
            }
        }
    }
}
