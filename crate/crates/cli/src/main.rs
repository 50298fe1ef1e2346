//! `drasym` command line: run the solver, the predictor, or a gamma sweep
//! from a configuration file, writing a CSV and a `.meta` sidecar.
//!
//! Exit code 0 means every requested run completed and both files were
//! written; any failure prints one `drasym: error: ...` line on stderr and
//! exits 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use drasym::{apply_overrides, execute, parse_config, write_outputs, Overrides, RunMode};

#[derive(Parser, Debug)]
#[command(name = "drasym", version, about = "Iterative l1 solver with a scalar error predictor")]
struct Cli {
    /// Configuration file (flat `key = value` lines, `#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Override the run mode: empirical|predict|both|sweep.
    #[arg(long)]
    mode: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scalar ensemble size.
    #[arg(long)]
    particles: Option<usize>,
    /// Override the number of solver trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

fn run(cli: Cli) -> Result<(), String> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| format!("config {}: {e}", cli.config.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    let mode = match cli.mode.as_deref() {
        Some(raw) => Some(raw.parse::<RunMode>().map_err(|e| format!("--mode: {e}"))?),
        None => None,
    };
    apply_overrides(
        &mut cfg,
        &Overrides {
            mode,
            seed: cli.seed,
            out: cli.out,
            particles: cli.particles,
            trials: cli.trials,
        },
    );
    // Overrides can change mode/trials/particles, so re-check the invariants.
    cfg.validate().map_err(|e| e.to_string())?;

    let report = execute(&cfg).map_err(|e| e.to_string())?;
    let meta = write_outputs(&cfg, &report)
        .map_err(|e| format!("writing {}: {e}", cfg.output_path.display()))?;

    if !cli.quiet {
        println!(
            "wrote {} rows to {} (sidecar {}) in {:.1}s",
            report.rows.len(),
            cfg.output_path.display(),
            meta.display(),
            report.wall.as_secs_f64()
        );
        if let Some(argmins) = &report.argmin_per_snapshot {
            for (k, gamma) in argmins {
                println!("argmin gamma at k={k}: {gamma}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("drasym: error: {message}");
            ExitCode::FAILURE
        }
    }
}
