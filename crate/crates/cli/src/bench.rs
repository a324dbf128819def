//! Benchmark scenarios: failure trials and batch sweeps.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use deltapath_core::workloads::{self, Scenario, ScenarioKind, REQUEST_BATCH_SIZES, WEIGHT_BATCH_SIZES};
use deltapath_core::{retrieve, Engine, Strategy};

use crate::gen::Kind;
use crate::metrics::{micros, Format, MetricRecord, MetricWriter};
use crate::{load_topology, output};

pub struct BenchConfig {
    pub topology: PathBuf,
    pub strategy: Strategy,
    pub workers: usize,
    pub scenario: Kind,
    pub trials: usize,
    /// One batch size instead of the full sweep.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub batch_size: usize,
    pub median: Duration,
    pub worst: Duration,
    /// Events (or requests) per second over all batches.
    pub throughput: f64,
}

impl Summary {
    fn of(batch_size: usize, mut times: Vec<Duration>) -> Summary {
        times.sort();
        let total: Duration = times.iter().sum();
        Summary {
            batch_size,
            median: times[times.len() / 2],
            worst: *times.last().expect("at least one trial"),
            throughput: (batch_size * times.len()) as f64 / total.as_secs_f64().max(1e-9),
        }
    }
}

pub const TABLE_HEADER: &str = "batch_size,median_us,worst_us,throughput_per_s";

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{:.3},{:.3},{:.1}",
            self.batch_size,
            micros(self.median),
            micros(self.worst),
            self.throughput
        )
    }
}

/// Runs the scenario and returns one summary per batch size. Failure
/// scenarios have a single summary with batch size 1.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<Summary>> {
    let topo = load_topology(&cfg.topology)?;
    let graph = topo.to_graph(&cfg.strategy).context("building graph")?;
    let initial = Engine::initialize(graph, cfg.strategy, cfg.workers)?;
    // Per-trial rows only go to a file; stdout carries the summary.
    let sink: Box<dyn Write> = match &cfg.out {
        Some(p) => output(Some(p))?,
        None => Box::new(std::io::sink()),
    };
    let mut metrics = MetricWriter::new(sink, cfg.format)?;
    let mut epoch = 0;
    let mut record = |metrics: &mut MetricWriter<Box<dyn Write>>, r: MetricRecord| {
        epoch += 1;
        metrics.write(&MetricRecord { epoch, ..r })
    };
    let kind = cfg
        .scenario
        .scenario()
        .context("bench needs link-failure, switch-failure, weight-updates or path-requests")?;
    let sizes: Vec<usize> = match (kind, cfg.batch_size) {
        (ScenarioKind::LinkFailure | ScenarioKind::SwitchFailure, _) => vec![1],
        (_, Some(b)) => vec![b],
        (ScenarioKind::WeightUpdateBatches, None) => WEIGHT_BATCH_SIZES.to_vec(),
        (ScenarioKind::PathRequestBatches, None) => REQUEST_BATCH_SIZES.to_vec(),
    };
    let mut summaries = Vec::new();
    for size in sizes {
        let sc = Scenario { kind, trials: cfg.trials, batch_size: size, seed: cfg.seed };
        let blocks = workloads::gen_scenario(&topo, &cfg.strategy, &sc)?;
        let mut engine = initial.clone();
        let mut times = Vec::with_capacity(blocks.len());
        for block in &blocks {
            if block.reset {
                // Cloning the initialized engine is the same state a fresh
                // initialize would produce.
                engine = initial.clone();
            }
            let requests = block.requests();
            if requests.is_empty() {
                let changes = block.changes();
                let t = Instant::now();
                let out = engine.step_epoch(&changes)?;
                let spent = t.elapsed();
                times.push(spent);
                record(&mut metrics, MetricRecord {
                    epoch: 0,
                    events: changes.len(),
                    rules_changed: out.changes.len(),
                    latency_us: micros(spent),
                    requests: 0,
                    retrieval_us: None,
                })?;
            } else {
                let t = Instant::now();
                for r in &requests {
                    std::hint::black_box(retrieve(&engine, r.src, r.dst).ok());
                }
                let spent = t.elapsed();
                times.push(spent);
                record(&mut metrics, MetricRecord {
                    epoch: 0,
                    events: 0,
                    rules_changed: 0,
                    latency_us: micros(spent),
                    requests: requests.len(),
                    retrieval_us: Some(micros(spent) / requests.len() as f64),
                })?;
            }
        }
        let s = Summary::of(size, times);
        log::info!("batch size {size}: median {:?} worst {:?}", s.median, s.worst);
        summaries.push(s);
    }
    metrics.finish()?;
    Ok(summaries)
}
