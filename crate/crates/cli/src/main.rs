use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hcm_cli::pipeline::{parse_stages, Pipeline, RunStatus, Stage};
use hcm_cli::{parse_config, RunConfig};
use hcm_core::error::{Error, Result};

/// Stator modes, traveling-wave transient, sweep, rotor model and report for
/// the hollow cylindrical ultrasonic motor.
#[derive(Parser, Debug)]
#[command(name = "hcm-sim", version)]
struct Args {
    /// TOML run configuration; defaults to the prototype.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of mesh,modes,transient,sweep,rotor,report, or `all`.
    #[arg(long, default_value = "all")]
    stages: String,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mesh refinement level (overrides `analysis.refinement`).
    #[arg(long)]
    refinement: Option<usize>,
    /// Seed for the eigensolver start vectors (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate the built-in checks; the exit status reflects them.
    #[arg(long)]
    checks: bool,
}

fn load(args: &Args) -> Result<(RunConfig, Vec<Stage>)> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::IoFailure {
            path: p.clone(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(r) = args.refinement {
        cfg.analysis.refinement = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.checks {
        cfg.report.checks = true;
    }
    cfg.validate()?;
    Ok((cfg, parse_stages(&args.stages)?))
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Ok(n) = std::env::var("HCM_SIM_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                hcm_core::par::configure_threads(n);
            }
            _ => eprintln!("warning: ignoring HCM_SIM_THREADS={n:?}"),
        }
    }
    let fallback_out = args.out.clone().unwrap_or_else(|| PathBuf::from("hcm-out"));
    let (cfg, stages) = match load(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = RunStatus::failed(Vec::new(), &e).write(&fallback_out);
            return ExitCode::from(2);
        }
    };
    let out = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or(fallback_out);
    let mut pipeline = Pipeline::new(cfg, out.clone());
    let status = pipeline.run(&stages);
    for r in &status.stages {
        eprintln!("{:<9} {:?} ({:.1} s)", r.stage.name(), r.state, r.seconds);
    }
    for w in &status.warnings {
        eprintln!("warning: {w}");
    }
    for c in &status.checks {
        println!("{}", c.line());
    }
    if let Some(e) = &status.error {
        eprintln!("error: {e}");
    }
    eprintln!("status: {}", out.join("status.json").display());
    ExitCode::from(status.exit_code as u8)
}
