//! Event replay and single queries.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use deltapath_core::formats::{parse_events, EpochBlock, EventLine};
use deltapath_core::oracle;
use deltapath_core::{
    retrieve, Engine, ForwardingRule, NodeId, Path, Policy, PolicyEngine, PolicyOutcome, Strategy,
    TopologyChange,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{micros, Format, MetricRecord, MetricWriter};
use crate::{load_topology, output};

pub struct RunConfig {
    pub topology: PathBuf,
    pub strategy: Strategy,
    pub workers: usize,
    pub events: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub verify: bool,
    pub seed: u64,
    /// Random path requests answered after every epoch, on top of the
    /// `req` lines in the event file.
    pub requests: usize,
    /// Rule change log.
    pub changes: Option<PathBuf>,
}

/// The engine disagrees with the from-scratch oracle.
#[derive(Debug)]
pub struct VerifyMismatch {
    pub epoch: u64,
    pub detail: String,
}

impl fmt::Display for VerifyMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed after epoch {}: {}", self.epoch, self.detail)
    }
}

impl std::error::Error for VerifyMismatch {}

pub fn load_events(path: Option<&std::path::Path>) -> Result<Vec<EpochBlock>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading events {}", path.display()))?;
    parse_events(&text).with_context(|| format!("parsing events {}", path.display()))
}

pub fn init_engine(topology: &std::path::Path, strategy: Strategy, workers: usize) -> Result<Engine> {
    let topo = load_topology(topology)?;
    let graph = topo.to_graph(&strategy).context("building graph")?;
    Ok(Engine::initialize(graph, strategy, workers)?)
}

fn verify(engine: &Engine) -> Result<(), VerifyMismatch> {
    let mismatch = |detail: String| VerifyMismatch { epoch: engine.epoch(), detail };
    let expected = oracle::solve(engine.graph(), engine.strategy()).map_err(|e| mismatch(e.to_string()))?;
    oracle::check_established(&engine.snapshot(), &expected, true)
        .map_err(|d| mismatch(d.to_string()))
}

fn hops(p: &Path) -> String {
    p.hops.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
}

fn outcome_line(epoch: u64, policies: &PolicyEngine, out: &PolicyOutcome) -> String {
    let mut line = format!("epoch={epoch} policy={} {}", out.policy, out.path);
    let body = &policies.policy(&out.policy).expect("evaluated policy exists").body;
    if let (Some(b), Some(name)) = (&out.backup, PolicyOutcome::annotation(body)) {
        line.push_str(&format!(" {name}={}", hops(b)));
    }
    if out.revisits {
        line.push_str(" revisits");
    }
    line
}

/// Adding a link identical to a stored one is legal (it becomes a parallel
/// link) but usually a mistake in a hand-written event file.
fn warn_duplicates(engine: &Engine, epoch: u64, changes: &[TopologyChange]) {
    for c in changes {
        if let TopologyChange::AddLink { a, b, props } = c {
            let w = engine.strategy().link_cost(props);
            if engine.graph().links_between(*a, *b).iter().any(|&(x, m)| x == w && m > 0) {
                log::warn!("epoch {epoch}: +link {a} {b} duplicates an existing link; adding a parallel link");
            }
        }
    }
}

fn rebuild(policies: &PolicyEngine, engine: &Engine) -> Result<PolicyEngine> {
    let mut fresh = PolicyEngine::new();
    for p in policies.policies() {
        fresh.add(p.clone(), engine)?;
    }
    Ok(fresh)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let blocks = load_events(cfg.events.as_deref())?;
    let mut metrics = MetricWriter::new(output(cfg.out.as_deref())?, cfg.format)?;
    let mut changes_log = match &cfg.changes {
        Some(p) => {
            let mut w = output(Some(p))?;
            writeln!(w, "{}", ForwardingRule::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let stdout = std::io::stdout();
    let mut answers = stdout.lock();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let start = Instant::now();
    let initial = init_engine(&cfg.topology, cfg.strategy, cfg.workers)?;
    let init_latency = start.elapsed();
    log::info!(
        "initialized {} switches, {} rules in {:?}",
        initial.graph().node_count(),
        initial.established_count(),
        init_latency
    );
    metrics.write(&MetricRecord {
        epoch: 0,
        events: 0,
        rules_changed: initial.established_count(),
        latency_us: micros(init_latency),
        requests: 0,
        retrieval_us: None,
    })?;
    if let Some(w) = changes_log.as_mut() {
        for r in initial.established_rules() {
            writeln!(w, "{}", r.csv_row(0))?;
        }
    }
    if cfg.verify {
        verify(&initial)?;
    }

    let mut engine = initial.clone();
    let mut policies = PolicyEngine::new();
    for block in &blocks {
        if block.reset {
            engine = initial.clone();
            policies = rebuild(&policies, &engine)?;
        }
        let changes = block.changes();
        warn_duplicates(&engine, block.epoch, &changes);
        let t = Instant::now();
        let out = engine
            .step_epoch(&changes)
            .with_context(|| format!("epoch {}", block.epoch))?;
        let latency = t.elapsed();
        policies.on_epoch(&changes)?;
        log::debug!(
            "epoch {}: {} changes, {} rule updates, {} rounds",
            block.epoch,
            changes.len(),
            out.changes.len(),
            out.rounds
        );
        if let Some(w) = changes_log.as_mut() {
            for r in &out.changes {
                writeln!(w, "{}", r.csv_row(block.epoch))?;
            }
        }
        if cfg.verify {
            verify(&engine)?;
        }

        let mut added = Vec::new();
        for line in &block.lines {
            match line {
                EventLine::AddPolicy { id, text } => {
                    let p = Policy::parse(id, text)?;
                    policies.add(p, &engine)?;
                    added.push(id.clone());
                }
                EventLine::RemovePolicy { id } => {
                    policies.remove(id)?;
                }
                _ => {}
            }
        }
        let ids: Vec<String> = if changes.is_empty() {
            added
        } else {
            policies.policies().map(|p| p.id.clone()).collect()
        };
        for id in ids {
            match policies.evaluate(&id, &engine) {
                Ok(o) => writeln!(answers, "{}", outcome_line(block.epoch, &policies, &o))?,
                Err(e) => writeln!(answers, "epoch={} policy={id} error: {e}", block.epoch)?,
            }
        }

        let mut requests: Vec<(String, NodeId, NodeId)> =
            block.requests().iter().map(|r| (format!("flow={}", r.flow_id), r.src, r.dst)).collect();
        let nodes: Vec<NodeId> = engine.graph().node_ids().collect();
        if nodes.len() >= 2 {
            for i in 0..cfg.requests {
                let mut pick = nodes.choose_multiple(&mut rng, 2);
                let (a, b) = (*pick.next().unwrap(), *pick.next().unwrap());
                requests.push((format!("sample={i}"), a, b));
            }
        }
        let mut spent = std::time::Duration::ZERO;
        for (tag, src, dst) in &requests {
            let t = Instant::now();
            let found = retrieve(&engine, *src, *dst);
            spent += t.elapsed();
            match found {
                Ok(p) => writeln!(answers, "epoch={} {tag} {p}", block.epoch)?,
                Err(e) => writeln!(answers, "epoch={} {tag} unreachable: {e}", block.epoch)?,
            }
        }
        metrics.write(&MetricRecord {
            epoch: block.epoch,
            events: block.lines.len(),
            rules_changed: out.changes.len(),
            latency_us: micros(latency),
            requests: requests.len(),
            retrieval_us: (!requests.is_empty()).then(|| micros(spent) / requests.len() as f64),
        })?;
    }
    metrics.finish()?;
    if let Some(mut w) = changes_log {
        w.flush()?;
    }
    Ok(())
}

/// Replays the changes of an event file, then retrieves one path.
pub fn query(
    topology: &std::path::Path,
    strategy: Strategy,
    workers: usize,
    events: Option<&std::path::Path>,
    src: NodeId,
    dst: NodeId,
) -> Result<Path> {
    let blocks = load_events(events)?;
    let initial = init_engine(topology, strategy, workers)?;
    let mut engine = initial.clone();
    for block in &blocks {
        if block.reset {
            engine = initial.clone();
        }
        engine.step_epoch(&block.changes())?;
    }
    Ok(retrieve(&engine, src, dst)?)
}
