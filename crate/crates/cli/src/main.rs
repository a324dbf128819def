//! `deltapath`: generate topologies and workloads, replay event files
//! against the incremental routing engine, benchmark, and query paths.

mod bench;
mod gen;
mod metrics;
mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deltapath_core::{NodeId, Strategy, Topology};

use crate::bench::{BenchConfig, TABLE_HEADER};
use crate::gen::{GenCommand, Kind};
use crate::metrics::Format;
use crate::run::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "deltapath", version, about = "Incremental all-pairs QoS routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct EngineArgs {
    /// Topology file.
    #[arg(long)]
    topology: PathBuf,
    /// hopcount, sd-freebw, sd-util or widest.
    #[arg(long, default_value = "hopcount", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a topology or an event file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Replay an event file and write per-epoch metrics.
    Run {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Metrics file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Check every epoch against the from-scratch oracle.
        #[arg(long)]
        verify: bool,
        /// Seed for sampled requests.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random path requests to answer after each epoch.
        #[arg(long, default_value_t = 0)]
        requests: usize,
        /// Write every rule change as CSV.
        #[arg(long)]
        changes: Option<PathBuf>,
    },
    /// Run a benchmark scenario and print median and worst latency.
    Bench {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, value_enum)]
        scenario: Kind,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Single batch size; batch scenarios sweep all sizes without it.
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-trial metrics file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Print the routed path between two switches.
    Query {
        #[command(flatten)]
        engine: EngineArgs,
        /// Apply these changes first.
        #[arg(long)]
        events: Option<PathBuf>,
        src: u32,
        dst: u32,
    },
}

pub(crate) fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::builtin(s).map_err(|e| e.to_string())
}

pub(crate) fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading topology {}", path.display()))?;
    Topology::parse(&text).with_context(|| format!("parsing topology {}", path.display()))
}

/// Buffered writer for a file, or stdout.
pub(crate) fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub(crate) fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(cmd) => gen::gen(cmd),
        Command::Run { engine, events, out, format, verify, seed, requests, changes } => {
            run::run(&RunConfig {
                topology: engine.topology,
                strategy: engine.strategy,
                workers: engine.workers as usize,
                events,
                out,
                format,
                verify,
                seed,
                requests,
                changes,
            })
        }
        Command::Bench { engine, scenario, trials, batch_size, seed, out, format } => {
            let summaries = bench::bench(&BenchConfig {
                topology: engine.topology,
                strategy: engine.strategy,
                workers: engine.workers as usize,
                scenario,
                trials,
                batch_size,
                seed,
                out,
                format,
            })?;
            let mut w = output(None)?;
            writeln!(w, "{TABLE_HEADER}")?;
            for s in summaries {
                writeln!(w, "{s}")?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Query { engine, events, src, dst } => {
            let path = run::query(
                &engine.topology,
                engine.strategy,
                engine.workers as usize,
                events.as_deref(),
                NodeId(src),
                NodeId(dst),
            )?;
            println!("{path}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DELTAPATH_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
