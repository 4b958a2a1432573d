use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use decoherence_loops::experiment::{
    parse_spec, run, validate, Diagnostic, Overrides, EXIT_INVALID, EXIT_OK,
};

/// Batch runner for loop-model experiments.
#[derive(Parser, Debug)]
#[command(name = "decoloops", version)]
struct Cli {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Worker threads; overrides the spec.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed (fixed policy) or base seed (derived policy); overrides the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check the spec and exit without running anything.
    #[arg(long)]
    validate_only: bool,
}

fn report(diags: &[Diagnostic]) -> ExitCode {
    for d in diags {
        eprintln!("invalid: {d}");
    }
    ExitCode::from(EXIT_INVALID as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.spec) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", cli.spec.display());
            return ExitCode::from(EXIT_INVALID as u8);
        }
    };
    let mut spec = match parse_spec(&text) {
        Ok(s) => s,
        Err(d) => return report(&d),
    };
    Overrides {
        workers: cli.workers,
        seed: cli.seed,
        out: cli.out,
    }
    .apply(&mut spec);

    if cli.validate_only {
        let diags = validate(&spec);
        if !diags.is_empty() {
            return report(&diags);
        }
        println!("spec is valid");
        return ExitCode::from(EXIT_OK as u8);
    }
    match run(&spec) {
        Ok(outcome) => {
            if !outcome.diagnostics.is_empty() {
                return report(&outcome.diagnostics);
            }
            if let Some(m) = &outcome.manifest {
                for t in m.tasks.iter().filter(|t| t.error.is_some()) {
                    eprintln!("task {} ({}) failed: {}", t.index, t.label, t.error.as_deref().unwrap_or(""));
                }
                println!(
                    "{}: {} tasks, {} failed, results in {}",
                    m.command,
                    m.tasks.len(),
                    m.failed,
                    spec.output.display()
                );
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
