//! `driftrack` experiment runner.
//!
//! Exit status: 0 when every check passes, 1 when any check fails, 2 when
//! the configuration is rejected or a run aborts.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use driftrack::experiments::{emit_csv, run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "driftrack", version, about = "Monte-Carlo experiments for drifting-parameter trackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One tracking run on the largest horizon; always exits 0 on success.
    Run(Common),
    /// Replicated runs over the horizons and a fitted error slope.
    Rates(Common),
    /// Monte-Carlo error against the first-moment bound at checkpoints.
    BoundCheck(Common),
    /// Empirical probes of the gain conditions at a static parameter.
    Verify(Common),
    /// Tracker driven by Kalman gains against the filter itself.
    KalmanCompare(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines). Defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// CSV destination; overrides `output` in the config. Without either,
    /// the CSV goes to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    replications: Option<usize>,
    /// Suppress the summary on stderr.
    #[arg(long)]
    quiet: bool,
}

fn load(kind: ExperimentKind, args: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::parse("")?,
    };
    cfg.kind = kind;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &Common) -> anyhow::Result<bool> {
    let cfg = load(kind, args)?;
    let outcome = run_experiment(&cfg)?;
    match &cfg.output {
        Some(path) => emit_csv(&outcome.csv, path).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(outcome.csv.render().as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e).context("writing stdout"),
                _ => {}
            }
        }
    }
    if !args.quiet {
        eprint!("{}", outcome.summary);
        eprintln!("{}", if outcome.pass { "PASS" } else { "FAIL" });
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Run(a) => (ExperimentKind::SingleRun, a),
        Command::Rates(a) => (ExperimentKind::RateSweep, a),
        Command::BoundCheck(a) => (ExperimentKind::BoundCheck, a),
        Command::Verify(a) => (ExperimentKind::ConditionVerify, a),
        Command::KalmanCompare(a) => (ExperimentKind::KalmanCompare, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
