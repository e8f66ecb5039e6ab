//! `bifield <verb> <config.json> [--block.key=value ...]`
//!
//! Exit codes: 0 success, 1 i/o, 2 usage, 3 parse or validation,
//! 4 numerical, 5 acceptance failure.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use artifacts::ArtifactWriter;
use commands::Verb;
use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "bifield",
    version,
    about = "Branching random walks with immigration: simulation, moment hierarchy, bounds and checks",
    after_help = "Config fields can be overridden with --block.key=value (for example \
                  --model.mu=1.2 or --sim.replicates=500); --seed=N and --output_dir=DIR \
                  set the top-level fields. The BIFIELD_THREADS environment variable caps \
                  the worker count."
)]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate the config, echo the resolved config.
    Validate { config: PathBuf },
    /// Tabulate p(t, 0, y) on a window.
    Kernel { config: PathBuf },
    /// Run a simulation ensemble.
    Simulate { config: PathBuf },
    /// Solve the factorial-moment hierarchy.
    Moments { config: PathBuf },
    /// Population cumulants and their steady state.
    Cumulants { config: PathBuf },
    /// Moment-bound constants and the bound check on computed moments.
    Bounds { config: PathBuf },
    /// Master-equation marginals on a tiny torus.
    Oracle { config: PathBuf },
    /// Run every acceptance check.
    VerifyAll { config: PathBuf },
}

impl Command {
    fn split(self) -> (Verb, PathBuf) {
        match self {
            Command::Validate { config } => (Verb::Validate, config),
            Command::Kernel { config } => (Verb::Kernel, config),
            Command::Simulate { config } => (Verb::Simulate, config),
            Command::Moments { config } => (Verb::Moments, config),
            Command::Cumulants { config } => (Verb::Cumulants, config),
            Command::Bounds { config } => (Verb::Bounds, config),
            Command::Oracle { config } => (Verb::Oracle, config),
            Command::VerifyAll { config } => (Verb::VerifyAll, config),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("BIFIELD_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("BIFIELD_THREADS must be a positive integer, got '{raw}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn execute(verb: Verb, config: ExperimentConfig) -> Result<(), CliError> {
    let echo = serde_json::to_value(&config).expect("config serializes");
    let seed = config.seed;
    println!("seed = {seed}");
    let mut out = ArtifactWriter::create(&config.output_dir)?;
    let result = config::resolve(config).and_then(|resolved| {
        out.write_json(
            "resolved_config.json",
            &serde_json::json!({ "config": &resolved.config, "derived": resolved.derived() }),
        )?;
        commands::run(verb, &resolved, &mut out)
    });
    let code = result.as_ref().err().map_or(0, CliError::exit_code);
    out.finish(verb.name(), seed, &echo, code)?;
    result
}

fn main() {
    let (args, overrides) = config::split_overrides(std::env::args().collect());
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let (verb, path) = cli.verb.split();
    let result = configure_threads()
        .and_then(|()| config::parse(&path, &overrides))
        .and_then(|config| execute(verb, config));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
