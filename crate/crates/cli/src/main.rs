//! `dgbench`: preprocess, synthesize, train, evaluate, benchmark and profile
//! domain-generalization models on multi-channel 1D biosignals.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use dgbench_core::{Error, ErrorKind, Result};
use serde::Serialize;

use crate::commands::EvalSplit;
use crate::config::RunConfig;

const WORKERS_VAR: &str = "DGBENCH_WORKERS";
const RUN_META_FILE: &str = "run_meta.json";

#[derive(Debug, Parser)]
#[command(
    name = "dgbench",
    version,
    about = "Domain-generalization benchmark for biosignal classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Dotted override, e.g. `--set trainer.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample, window, normalize and label the recordings of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Tab-separated ECG class map (code, name); the built-in one otherwise.
        #[arg(long)]
        class_map: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic multi-domain windowed dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and save its best checkpoint and run log.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained run on its intra-domain test split and held-out domains.
    Evaluate {
        /// Output directory of a `train` run.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        split: EvalSplit,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full protocol: every iteration times every repeat, aggregated.
    Benchmark {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter, MAC and peak-memory counts of the configured model.
    Complexity {
        /// Input window as CHANNELSxLENGTH, e.g. 12x5000.
        #[arg(long)]
        input_shape: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Benchmark { .. } => "benchmark",
            Command::Complexity { .. } => "complexity",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Preprocess { common, .. }
            | Command::Synth { common }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Benchmark { common, .. }
            | Command::Complexity { common, .. } => common,
        }
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    args: Vec<String>,
    version: &'a str,
    workers: usize,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn parse_shape(text: &str) -> Result<[usize; 2]> {
    let bad = || Error::Config(format!("input shape `{text}` is not CHANNELSxLENGTH"));
    let (c, l) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let c = c.trim().parse().map_err(|_| bad())?;
    let l = l.trim().parse().map_err(|_| bad())?;
    Ok([c, l])
}

fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_VAR}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn run(command: &Command) -> Result<String> {
    let common = command.common();
    let mut cfg = load_config(common)?;
    let out: &Path = &common.out;
    match command {
        Command::Preprocess {
            manifest, class_map, ..
        } => commands::preprocess(manifest, class_map.as_deref(), &cfg, out),
        Command::Synth { .. } => commands::synth(&cfg, out),
        Command::Train { dataset, .. } => commands::train(dataset, &cfg, out),
        Command::Evaluate {
            checkpoint,
            dataset,
            split,
            ..
        } => commands::evaluate(checkpoint, dataset, *split, &cfg, out),
        Command::Benchmark { dataset, .. } => commands::benchmark(dataset, &cfg, out),
        Command::Complexity { input_shape, .. } => {
            if let Some(s) = input_shape {
                cfg.complexity.input_shape = parse_shape(s)?;
            }
            commands::complexity(&cfg, out)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = unix_now();
    let result = worker_count().and_then(|workers| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
        let line = run(&cli.command)?;
        let meta = RunMeta {
            command: cli.command.name(),
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION"),
            workers,
            started_unix: started,
            finished_unix: unix_now(),
        };
        let path = cli.command.common().out.join(RUN_META_FILE);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(line)
    });
    match result {
        Ok(line) => {
            println!("{}: {line}", cli.command.name());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dgbench {}: {e}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("12x5000").unwrap(), [12, 5000]);
        assert_eq!(parse_shape("62X5").unwrap(), [62, 5]);
        for bad in ["12", "x5", "12x", "a x b"] {
            assert!(parse_shape(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::NonFiniteParam { name: "w".into() }), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
