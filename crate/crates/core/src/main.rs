use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kg_bohm::cli::{
    cmd_classify, cmd_ensemble, cmd_simulate, cmd_verify, describe, exit_code, EXIT_CHECK_FAILED, EXIT_CONFIG,
};
use kg_bohm::scenarios::resolve;

#[derive(Parser)]
#[command(name = "kg-bohm", version, about = "Bohmian trajectories for Klein-Gordon wave functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file, or the name of a builtin scenario.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "kg-bohm-out")]
    out: PathBuf,
    /// Overrides the seed of the ensemble or verification run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all hardware threads). Never changes output.
    #[arg(long, global = true, env = "KG_BOHM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate trajectories from the configured start points.
    Simulate,
    /// Partition the measurement patch into Σ′, Σ⁺ and Σ⁻.
    Classify,
    /// Sample, propagate and compare an ensemble against the prediction.
    Ensemble,
    /// Run every applicable check; exit status 1 if any fails.
    Verify,
}

fn run(cli: &Cli) -> Result<i32, kg_bohm::Error> {
    let arg = cli.config.as_deref().ok_or_else(|| kg_bohm::Error::Config("`--config` is required".into()))?;
    let sc = resolve(arg)?.validate()?;
    match cli.command {
        Command::Simulate => {
            for r in cmd_simulate(&sc, &cli.out)? {
                println!("{}: {} at s = {}", r.file, r.termination.label(), r.s_end);
            }
        }
        Command::Classify => {
            let (_, s) = cmd_classify(&sc, &cli.out)?;
            println!(
                "cells: {} prime, {} plus, {} minus, {} unresolved; flux balance {:.3e} (initial flux {:.6})",
                s.sigma_prime_cells, s.sigma_plus_cells, s.sigma_minus_cells, s.unresolved_cells, s.flux_balance, s.initial_flux
            );
        }
        Command::Ensemble => {
            let r = cmd_ensemble(&sc, &cli.out, cli.seed)?;
            let p = r.chi_square.as_ref().map_or(f64::NAN, |c| c.p_value);
            println!(
                "{} of {} crossings in patch; forbidden hits {} ({} outside buffer); sup deviation {:.3e}; chi-square p = {p:.4}",
                r.in_patch,
                r.n,
                r.forbidden_hits(),
                r.forbidden_outside_buffer,
                r.sup_deviation
            );
        }
        Command::Verify => {
            let (reports, ok) = cmd_verify(&sc, &cli.out, cli.seed)?;
            for r in &reports {
                println!("{} {:<40} {:?}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.measured.first());
            }
            if !ok {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot configure {k} threads: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let code = run(&cli).unwrap_or_else(|e| {
        eprintln!("error: {}", describe(&e));
        exit_code(&e)
    });
    ExitCode::from(code as u8)
}
