use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use phasefield_core::harness::Fault;

mod commands;
mod config;
mod output;

use output::{RunRecord, Status};

#[derive(Debug, Parser)]
#[command(name = "phasefield", version, about = "Boundary control of a phase-field system with a dynamic boundary condition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the state equations for the configured control.
    Simulate(RunArgs),
    /// Compare the adjoint gradient with finite differences and Taylor remainders.
    Gradcheck(RunArgs),
    /// Run projected gradient from the configured control and certify the result.
    Optimize(RunArgs),
    /// Track Yosida-regularized solves as epsilon decreases.
    SweepEps(RunArgs),
    /// Sample the continuous-dependence ratio over control pairs.
    Contdep(RunArgs),
    /// Check that order parameters stay inside the potential domain.
    Audit(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// `negated-gradient` or `perturbed-trajectory`; only `gradcheck` accepts it.
    #[arg(long)]
    inject_fault: Option<Fault>,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Simulate(a) => ("simulate", a),
            Command::Gradcheck(a) => ("gradcheck", a),
            Command::Optimize(a) => ("optimize", a),
            Command::SweepEps(a) => ("sweep-eps", a),
            Command::Contdep(a) => ("contdep", a),
            Command::Audit(a) => ("audit", a),
        }
    }
}

fn dispatch(name: &str, args: &RunArgs, record: &mut RunRecord) -> Result<bool> {
    std::fs::create_dir_all(&args.out)?;
    let cfg = config::parse_config(&args.config)?;
    record.manifest.seed = Some(args.seed.unwrap_or(cfg.seed));
    if args.inject_fault.is_some() && name != "gradcheck" {
        bail!("--inject-fault: only gradcheck injects faults");
    }
    match name {
        "simulate" => commands::simulate(&cfg, args.seed, record),
        "gradcheck" => commands::gradcheck(&cfg, args.seed, args.inject_fault, record),
        "optimize" => commands::optimize(&cfg, args.seed, record),
        "sweep-eps" => commands::sweep_eps(&cfg, args.seed, record),
        "contdep" => commands::contdep(&cfg, args.seed, record),
        "audit" => commands::audit(&cfg, args.seed, record),
        _ => unreachable!("clap only yields known subcommands"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.parts();
    let mut record = RunRecord::start(name, &args.config, &args.out);
    let code = match dispatch(name, args, &mut record) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            record.manifest.status = Status::Failed;
            eprintln!("{name}: checks failed, see {}", args.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            record.manifest.status = Status::Error;
            record.manifest.failing_step = commands::failing_step(&e);
            record.manifest.error = Some(format!("{e:#}"));
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    };
    if let Err(e) = record.finish() {
        eprintln!("error: manifest not written: {e:#}");
        return ExitCode::from(2);
    }
    code
}
