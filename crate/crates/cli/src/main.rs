use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use langvec::pipeline::{Pipeline, PipelineConfig, Stage, StageOutcome};
use langvec::Error;

/// Typological language vectors: run one pipeline stage or the full chain.
#[derive(Debug, Parser)]
#[command(name = "langvec", version)]
struct Cli {
    /// Stage to run (ingest, bpe-learn, train-lm, train-nmt, extract, baseline,
    /// predict, report, bootstrap, traj, synth) or `run` for the full chain.
    command: Option<String>,

    /// Pipeline config file (key = value lines).
    #[arg(long)]
    config: PathBuf,

    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Stage to run; same as the positional command.
    #[arg(long)]
    stage: Option<String>,
}

fn target(cli: &Cli) -> Result<Option<Stage>, Error> {
    let name = match (&cli.command, &cli.stage) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Validation(format!("conflicting stages `{a}` and `{b}`")));
        }
        (Some(a), _) | (None, Some(a)) => a.as_str(),
        (None, None) => "run",
    };
    match name {
        "run" => Ok(None),
        other => other.parse().map(Some),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let stage = target(cli)?;
    let config = PipelineConfig::load(&cli.config, cli.seed)?;
    let pipeline = Pipeline::open(config)?;
    let stages = match stage {
        Some(s) => vec![s],
        None => pipeline.chain(),
    };
    for s in stages {
        let outcome = pipeline.run_stage(s)?;
        match outcome {
            StageOutcome::Ran => eprintln!("{s}: done"),
            StageOutcome::Skipped => eprintln!("{s}: up to date"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
