use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use amcsim::harness::checks::run_checks;
use amcsim::harness::{preset_experiment_1, preset_experiment_2, run_experiment, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "amcsim", version, about = "Active multiple matrix completion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of repetitions.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run one of the built-in experiments.
    Preset {
        which: PresetName,
        /// Divides every dimension by this factor.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the invariant suite.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Exp1,
    Exp2,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn execute(
    mut cfg: ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
    reps: Option<usize>,
    threads: Option<usize>,
) -> Result<(), String> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(reps) = reps {
        cfg.reps = reps;
    }
    let started = Instant::now();
    let output = run_experiment(&cfg, threads.unwrap_or_else(default_threads)).map_err(|e| e.to_string())?;
    write_outputs(out, &output).map_err(|e| e.to_string())?;
    eprintln!(
        "{}: {} runs, {} rows written to {} in {:.1}s",
        cfg.id,
        output.runs.len(),
        output.rows.len(),
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            reps,
            threads,
        } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or("no output directory: pass --out or set output_dir in the config")?;
            execute(cfg, &out, seed, reps, threads)
        }
        Command::Preset {
            which,
            scale,
            out,
            seed,
            reps,
            threads,
        } => {
            let base = match which {
                PresetName::Exp1 => preset_experiment_1(),
                PresetName::Exp2 => preset_experiment_2(),
            };
            let cfg = base.scaled(scale).map_err(|e| e.to_string())?;
            execute(cfg, &out, seed, reps, threads)
        }
        Command::Check => {
            let checks = run_checks();
            let failed = checks.iter().filter(|c| c.outcome.is_err()).count();
            for c in &checks {
                match &c.outcome {
                    Ok(()) => println!("PASS  {}", c.name),
                    Err(detail) => println!("FAIL  {}: {detail}", c.name),
                }
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(format!("{failed} of {} checks failed", checks.len()))
            }
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("amcsim: {msg}");
            ExitCode::FAILURE
        }
    }
}
