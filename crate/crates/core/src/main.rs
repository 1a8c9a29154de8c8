use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otfs_mimo::experiments::{emit, run_with_threads, verify_suite, ExperimentId, ExperimentSpec};

#[derive(Parser)]
#[command(
    name = "otfs-mimo",
    version,
    about = "OTFS multi-user massive MIMO experiments"
)]
struct Cli {
    /// Worker threads; the flag overrides OTFS_THREADS.
    #[arg(long, global = true, env = "OTFS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write CSV, JSON and gnuplot data.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant checks; exits non-zero if any fails.
    Verify,
    /// Print the default spec of an experiment as JSON.
    Preset { id: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, out, seed } => {
            let result = (|| -> otfs_mimo::Result<Vec<PathBuf>> {
                let text = std::fs::read_to_string(&spec)?;
                let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
                if let Some(s) = seed {
                    spec.seed = s;
                }
                let table = run_with_threads(&spec, cli.threads)?;
                emit(&table, &spec.outputs, &out)
            })();
            match result {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify => {
            let checks = otfs_mimo::experiments::with_threads(cli.threads, verify_suite);
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {:<34} value {:.3e} (tol {:.0e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.tolerance
                );
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Preset { id } => match ExperimentId::parse(&id) {
            Some(id) => {
                let spec = ExperimentSpec::preset(id);
                println!(
                    "{}",
                    serde_json::to_string_pretty(&spec).expect("spec serializes")
                );
                ExitCode::SUCCESS
            }
            None => {
                let names: Vec<&str> = ExperimentId::ALL.iter().map(|i| i.name()).collect();
                eprintln!(
                    "unknown experiment {id}; expected one of {}",
                    names.join(", ")
                );
                ExitCode::FAILURE
            }
        },
    }
}
