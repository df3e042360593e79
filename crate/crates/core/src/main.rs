use clap::{Parser, Subcommand};
use dirac_harmonic::cli;
use dirac_harmonic::config::RunConfig;
use dirac_harmonic::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dhm", version, about = "Twisted Dirac spectra, Dirac-harmonic map flows and index tables")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (`out` when omitted; verify writes nothing unless set).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multiplies every verify tolerance.
    #[arg(long, global = true, default_value_t = 1.0, hide = true)]
    tolerance_scale: f64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Spectrum of the twisted Dirac operator along the configured map.
    Spectrum,
    /// Runs the heat flow from the configured map.
    Flow,
    /// CP¹ kernel-dimension table, and spectral flow along a homotopy.
    Index,
    /// Runs the self-check suite.
    Verify,
}

fn load(args: &Args, required: bool) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(Error::Config("--config is required".into())),
        None => RunConfig::parse("{}")?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<bool, Error> {
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    match args.command {
        Command::Spectrum => {
            let s = cli::cmd_spectrum(&load(args, true)?, &out)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        Command::Flow => {
            let tr = cli::cmd_flow(&load(args, true)?, &out)?;
            if let Some(e) = tr.events.last() {
                println!("{:?} at t = {} after {} steps", e.kind, e.t, tr.state.step);
            }
        }
        Command::Index => cli::cmd_index(&load(args, false)?, &out)?,
        Command::Verify => {
            let checks = cli::cmd_verify(args.tolerance_scale, args.out.as_deref())?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
