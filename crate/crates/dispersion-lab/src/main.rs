use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dispersion_lab::{run_with_mode, ExperimentConfig, ExperimentKind, LabError, Mode};

#[derive(Parser)]
#[command(version, about = "Dispersive decay experiments for the fourth-order Schrödinger operator on R^4", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); a built-in preset when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputDir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the subcommand's main tolerance (classification rank or quadrature)
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Free-kernel invariants
    Selftest,
    /// Classify zero energy at the configured coupling
    Classify,
    /// Sweep the coupling and locate critical values
    Sweep,
    /// Decay experiment with a fitted exponent
    Decay,
    /// Evolution kernel rows from Stone's formula, no fit
    Stone,
}

fn config_for(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let forced = match cli.command {
        Command::Selftest => Some(ExperimentKind::KernelSelftest),
        Command::Classify => Some(ExperimentKind::ClassifyOnly),
        Command::Sweep => Some(ExperimentKind::Sweep),
        Command::Decay | Command::Stone => None,
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(forced.unwrap_or(ExperimentKind::FreeDecay)),
    };
    match forced {
        Some(kind) => cfg.experiment = kind,
        None if !cfg.experiment.is_decay() => {
            return Err(LabError::Config(format!("{} is not a decay experiment", cfg.experiment.name())));
        }
        None => {}
    }
    if let Some(tol) = cli.tol {
        match cli.command {
            Command::Classify | Command::Sweep => cfg.tolerances.classify = tol,
            _ => cfg.tolerances.quad_rel = tol,
        }
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, LabError> {
    let cfg = config_for(cli)?;
    let mode = if cli.command == Command::Stone { Mode::RowsOnly } else { Mode::Full };
    let bundle = run_with_mode(&cfg, mode)?;
    let dir = PathBuf::from(&cfg.output_dir);
    bundle.write(&dir)?;
    let report = bundle.report();
    for m in &report.messages {
        eprintln!("{m}");
    }
    if let Some(fit) = report.decay.as_ref().and_then(|d| d.fit.as_ref()) {
        println!("exponent {:.6} (r^2 {:.6}) over [{}, {}]", fit.exponent, fit.r_squared, fit.window.0, fit.window.1);
    }
    if let Some(c) = &report.classification {
        println!("verdict {:?} dims {:?} coupling {}", c.verdict, c.dims, c.beta);
    }
    for c in &report.checks {
        println!("{} {} = {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    println!("wrote {}", dir.display());
    Ok(bundle.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
