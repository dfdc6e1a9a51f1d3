//! Thin command-line front end over `wavemix::experiments`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use wavemix::config::{ExperimentKind, Format, Manifest};
use wavemix::experiments::{resolve_threads, run_subcommand, with_threads, RunOptions, THREADS_ENV};
use wavemix::Error;

#[derive(Parser)]
#[command(name = "wavemix", version, about = "Mixing experiments for the randomly forced damped wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML manifest; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores). WAVEMIX_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// One worker thread, for bitwise reproducible runs.
    #[arg(long, global = true)]
    single_thread: bool,

    /// Restricts output to one format.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,

    /// Checkpoint to resume from (`simulate` only).
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Simulate,
    Couple,
    Mixing,
    Verify,
    Irreducibility,
    Spectrum,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Csv,
    Ndjson,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Simulate => ExperimentKind::Simulate,
            Command::Couple => ExperimentKind::Couple,
            Command::Mixing => ExperimentKind::Mixing,
            Command::Verify => ExperimentKind::Verify,
            Command::Irreducibility => ExperimentKind::Irreducibility,
            Command::Spectrum => ExperimentKind::Spectrum,
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let mut manifest = match &cli.config {
        Some(path) => Manifest::from_path(path)?,
        None => Manifest::default(),
    };
    if let Some(seed) = cli.seed {
        manifest.noise.seed = seed;
    }
    if let Some(out) = &cli.out {
        manifest.output.dir = out.clone();
    }
    let env = std::env::var(THREADS_ENV).ok();
    let threads = resolve_threads(cli.threads, cli.single_thread, env.as_deref())?;
    let opts = RunOptions {
        out_dir: manifest.output.dir.clone(),
        format: cli.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Ndjson => Format::Ndjson,
        }),
        resume: cli.resume.clone(),
    };
    let kind = cli.command.kind();
    let summary = with_threads(threads, || run_subcommand(&manifest, kind, &opts))??;
    for w in &summary.warnings {
        eprintln!("{}", json!({ "record": "warning", "message": w }));
    }
    println!("{}", serde_json::to_string(&summary)?);
    Ok(summary.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", json!({ "record": "error", "kind": e.kind(), "message": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
