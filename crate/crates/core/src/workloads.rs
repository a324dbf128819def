//! Topology generators, weight plans and event workloads.
//!
//! Everything is a pure function of its parameters and seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::{EpochBlock, EventLine, LinkSpec, Topology};
use crate::graph_model::{undirected, LinkProperties, NodeId, NodeLabel, NodeRecord, TopologyChange};
use crate::oracle;
use crate::path_retrieval::PathRequest;
use crate::strategy::Strategy;

/// Link capacity used by the generators.
pub const DEFAULT_CAPACITY: f64 = 10.0;

/// Utilization added to each link of a selected path in weight-update
/// batches.
pub const UPDATE_STEP: f64 = 5.0;

/// Batch sizes of the weight-update sweep.
pub const WEIGHT_BATCH_SIZES: [usize; 11] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];

/// Batch sizes of the path-request sweep.
pub const REQUEST_BATCH_SIZES: [usize; 14] =
    [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("fat-tree arity must be even and at least 2, got {0}")]
    OddArity(usize),
    #[error("no {r}-regular connected graph on {n} switches")]
    Infeasible { n: usize, r: usize },
    #[error("{0}")]
    InvalidScenario(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanKind {
    /// Every link gets the same utilization.
    HopCount,
    /// Integer utilization drawn uniformly from 1..=100.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightPlan {
    pub kind: PlanKind,
    pub seed: u64,
}

impl WeightPlan {
    pub fn hop_count() -> Self {
        WeightPlan { kind: PlanKind::HopCount, seed: 0 }
    }

    pub fn uniform(seed: u64) -> Self {
        WeightPlan { kind: PlanKind::Uniform, seed }
    }

    /// Rewrites the utilization of every link.
    pub fn apply(&self, topo: &mut Topology) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for link in &mut topo.links {
            link.props.utilization = match self.kind {
                PlanKind::HopCount => 1.0,
                PlanKind::Uniform => rng.gen_range(1..=100) as f64,
            };
        }
    }
}

fn default_props() -> LinkProperties {
    LinkProperties { capacity: DEFAULT_CAPACITY, utilization: 1.0, delay: 0.0 }
}

fn switch(id: u32, props: &[(&str, String)]) -> NodeRecord {
    let mut n = NodeRecord::new(NodeId(id), NodeLabel::Switch);
    for (k, v) in props {
        n.properties.insert(k.to_string(), v.clone());
    }
    n
}

/// k-ary fat-tree at switch level. Cores are numbered first, then per pod
/// the aggregation switches followed by the edge switches. Edge switches
/// carry a `hosts` count instead of host nodes.
pub fn gen_fattree(k: usize) -> Result<Topology, WorkloadError> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(WorkloadError::OddArity(k));
    }
    let half = k / 2;
    let cores = half * half;
    let mut topo = Topology::default();
    for c in 0..cores {
        topo.nodes.push(switch(c as u32, &[("role", "core".into())]));
    }
    let agg = |p: usize, a: usize| (cores + p * k + a) as u32;
    let edge = |p: usize, e: usize| (cores + p * k + half + e) as u32;
    for p in 0..k {
        for a in 0..half {
            topo.nodes.push(switch(agg(p, a), &[("role", "agg".into()), ("pod", p.to_string())]));
        }
        for e in 0..half {
            topo.nodes.push(switch(
                edge(p, e),
                &[("role", "edge".into()), ("pod", p.to_string()), ("hosts", half.to_string())],
            ));
        }
    }
    for p in 0..k {
        for e in 0..half {
            for a in 0..half {
                topo.links.push(LinkSpec { a: NodeId(edge(p, e)), b: NodeId(agg(p, a)), props: default_props() });
            }
        }
        for a in 0..half {
            for j in 0..half {
                let core = (a * half + j) as u32;
                topo.links.push(LinkSpec { a: NodeId(agg(p, a)), b: NodeId(core), props: default_props() });
            }
        }
    }
    Ok(topo)
}

/// Ids of the edge switches of a generated fat-tree.
pub fn fattree_edge_switches(topo: &Topology) -> Vec<NodeId> {
    topo.nodes
        .iter()
        .filter(|n| n.properties.get("role").map(String::as_str) == Some("edge"))
        .map(|n| n.id)
        .collect()
}

/// Random `r`-regular graph on `n` switches, built by linking random
/// switches with free ports and splitting an existing link whenever the
/// remaining free ports cannot be paired directly. Retries until the result
/// is connected.
pub fn gen_jellyfish(n: usize, r: usize, seed: u64) -> Result<Topology, WorkloadError> {
    let infeasible = WorkloadError::Infeasible { n, r };
    if n == 0 || r >= n || !(n * r).is_multiple_of(2) {
        return Err(infeasible);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        if let Some(adj) = jellyfish_attempt(n, r, &mut rng) {
            if connected(&adj) {
                let mut topo = Topology::default();
                for i in 0..n {
                    topo.nodes.push(switch(i as u32, &[]));
                }
                for (a, ns) in adj.iter().enumerate() {
                    for &b in ns.iter().filter(|&&b| b > a) {
                        topo.links.push(LinkSpec {
                            a: NodeId(a as u32),
                            b: NodeId(b as u32),
                            props: default_props(),
                        });
                    }
                }
                return Ok(topo);
            }
        }
    }
    Err(infeasible)
}

fn jellyfish_attempt(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Option<Vec<BTreeSet<usize>>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let free = |adj: &Vec<BTreeSet<usize>>, v: usize| r - adj[v].len();
    let link = |adj: &mut Vec<BTreeSet<usize>>, a: usize, b: usize| {
        adj[a].insert(b);
        adj[b].insert(a);
    };
    let unlink = |adj: &mut Vec<BTreeSet<usize>>, a: usize, b: usize| {
        adj[a].remove(&b);
        adj[b].remove(&a);
    };
    for _ in 0..(n * r * 4 + 100) {
        let open: Vec<usize> = (0..n).filter(|&v| free(&adj, v) > 0).collect();
        if open.is_empty() {
            return Some(adj);
        }
        let mut pairs = Vec::new();
        if open.len() > 32 {
            for _ in 0..64 {
                let a = *open.choose(rng)?;
                let b = *open.choose(rng)?;
                if a != b && !adj[a].contains(&b) {
                    pairs.push((a, b));
                    break;
                }
            }
        }
        if pairs.is_empty() {
            for (i, &a) in open.iter().enumerate() {
                for &b in &open[i + 1..] {
                    if !adj[a].contains(&b) {
                        pairs.push((a, b));
                    }
                }
            }
        }
        if let Some(&(a, b)) = pairs.choose(rng) {
            link(&mut adj, a, b);
            continue;
        }
        // Stuck: free ports only on switches already linked to each other.
        let p = *open.choose(rng)?;
        let links: Vec<(usize, usize)> = (0..n)
            .flat_map(|x| adj[x].iter().filter(move |&&y| y > x).map(move |&y| (x, y)))
            .collect();
        if free(&adj, p) >= 2 {
            let (x, y) = links
                .iter()
                .copied()
                .filter(|&(x, y)| x != p && y != p && !adj[p].contains(&x) && !adj[p].contains(&y))
                .choose(rng)?;
            unlink(&mut adj, x, y);
            link(&mut adj, p, x);
            link(&mut adj, p, y);
        } else {
            let q = *open.iter().filter(|&&q| q != p).choose(rng)?;
            let (x, y) = links
                .iter()
                .flat_map(|&(x, y)| [(x, y), (y, x)])
                .filter(|&(x, y)| {
                    ![p, q].contains(&x) && ![p, q].contains(&y) && !adj[p].contains(&x) && !adj[q].contains(&y)
                })
                .choose(rng)?;
            unlink(&mut adj, x, y);
            link(&mut adj, p, x);
            link(&mut adj, q, y);
        }
    }
    None
}

fn connected(adj: &[BTreeSet<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Connected random graph on `n` switches: a random spanning tree plus
/// random links until the average degree reaches `avg_degree`, with no
/// switch above `max_degree`.
pub fn gen_random_graph(n: usize, avg_degree: f64, max_degree: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for v in 1..n {
        let candidates: Vec<usize> = (0..v).filter(|&u| adj[u].len() < max_degree).collect();
        let u = *candidates.choose(&mut rng).unwrap_or(&(v - 1));
        adj[u].insert(v);
        adj[v].insert(u);
    }
    let target = ((avg_degree * n as f64) / 2.0).round() as usize;
    let mut edges = n.saturating_sub(1);
    let mut attempts = 0;
    while edges < target && attempts < 100 * n {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || adj[a].contains(&b) || adj[a].len() >= max_degree || adj[b].len() >= max_degree {
            continue;
        }
        adj[a].insert(b);
        adj[b].insert(a);
        edges += 1;
    }
    let mut topo = Topology::default();
    for i in 0..n {
        topo.nodes.push(switch(i as u32, &[]));
    }
    for (a, ns) in adj.iter().enumerate() {
        for &b in ns.iter().filter(|&&b| b > a) {
            topo.links.push(LinkSpec { a: NodeId(a as u32), b: NodeId(b as u32), props: default_props() });
        }
    }
    topo
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    LinkFailure,
    SwitchFailure,
    WeightUpdateBatches,
    PathRequestBatches,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Trials, or batches for the batch scenarios.
    pub trials: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Scenario {
    fn check(&self) -> Result<(), WorkloadError> {
        if self.trials == 0 || self.batch_size == 0 {
            return Err(WorkloadError::InvalidScenario(
                "trials and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One epoch per trial, each removing a random link (or a random switch)
/// from the initial topology; every trial after the first starts with a
/// reset.
pub fn gen_failure_events(topo: &Topology, scenario: &Scenario) -> Result<Vec<EpochBlock>, WorkloadError> {
    scenario.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut blocks = Vec::with_capacity(scenario.trials);
    for t in 0..scenario.trials {
        let change = match scenario.kind {
            ScenarioKind::LinkFailure => {
                let l = topo.links.choose(&mut rng).ok_or_else(|| {
                    WorkloadError::InvalidScenario("topology has no links".into())
                })?;
                TopologyChange::RemoveLink { a: l.a, b: l.b, weight: None }
            }
            ScenarioKind::SwitchFailure => {
                let n = topo.nodes.choose(&mut rng).ok_or_else(|| {
                    WorkloadError::InvalidScenario("topology has no switches".into())
                })?;
                TopologyChange::RemoveNode { id: n.id }
            }
            other => {
                return Err(WorkloadError::InvalidScenario(format!("{other:?} is not a failure scenario")))
            }
        };
        blocks.push(EpochBlock { epoch: t as u64 + 1, reset: t > 0, lines: vec![EventLine::Change(change)] });
    }
    Ok(blocks)
}

/// Weight-update batches: each batch takes the optimal paths of random
/// switch pairs on the current weights and raises the utilization of their
/// links by [`UPDATE_STEP`] (capped at 100) until it holds `batch_size`
/// updates.
pub fn gen_weight_update_batches(
    topo: &Topology,
    strategy: &Strategy,
    scenario: &Scenario,
) -> Result<Vec<EpochBlock>, WorkloadError> {
    scenario.check()?;
    let mut graph = topo
        .to_graph(strategy)
        .map_err(|e| WorkloadError::InvalidScenario(e.to_string()))?;
    let mut util: BTreeMap<(NodeId, NodeId), f64> =
        topo.links.iter().map(|l| (undirected(l.a, l.b), l.props.utilization)).collect();
    let nodes: Vec<NodeId> = topo.nodes.iter().map(|n| n.id).collect();
    if nodes.len() < 2 {
        return Err(WorkloadError::InvalidScenario("need at least two switches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut blocks = Vec::with_capacity(scenario.trials);
    for t in 0..scenario.trials {
        let mut lines = Vec::with_capacity(scenario.batch_size);
        let mut misses = 0;
        while lines.len() < scenario.batch_size {
            let (s, d) = {
                let mut pick = nodes.choose_multiple(&mut rng, 2);
                (*pick.next().unwrap(), *pick.next().unwrap())
            };
            let path = oracle::best_path(&graph, strategy, s, d)
                .map_err(|e| WorkloadError::InvalidScenario(e.to_string()))?;
            let Some(path) = path else {
                misses += 1;
                if misses > 1000 {
                    return Err(WorkloadError::InvalidScenario("no connected switch pairs".into()));
                }
                continue;
            };
            for hop in path.windows(2) {
                if lines.len() == scenario.batch_size {
                    break;
                }
                let key = undirected(hop[0], hop[1]);
                let u = util.get_mut(&key).expect("path link exists");
                *u = (*u + UPDATE_STEP).min(100.0);
                lines.push(EventLine::Change(TopologyChange::UpdateWeight {
                    a: key.0,
                    b: key.1,
                    utilization: *u,
                }));
            }
        }
        for line in &lines {
            if let EventLine::Change(c) = line {
                graph
                    .apply_change(c, strategy)
                    .map_err(|e| WorkloadError::InvalidScenario(e.to_string()))?;
            }
        }
        blocks.push(EpochBlock { epoch: t as u64 + 1, reset: false, lines });
    }
    Ok(blocks)
}

/// `trials` epochs of `batch_size` path requests between random distinct
/// switches.
pub fn gen_path_requests(topo: &Topology, scenario: &Scenario) -> Result<Vec<EpochBlock>, WorkloadError> {
    scenario.check()?;
    let nodes: Vec<NodeId> = topo.nodes.iter().map(|n| n.id).collect();
    if nodes.len() < 2 {
        return Err(WorkloadError::InvalidScenario("need at least two switches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut flow = 0u64;
    let mut blocks = Vec::with_capacity(scenario.trials);
    for t in 0..scenario.trials {
        let mut lines = Vec::with_capacity(scenario.batch_size);
        for _ in 0..scenario.batch_size {
            let mut pick = nodes.choose_multiple(&mut rng, 2);
            let (src, dst) = (*pick.next().unwrap(), *pick.next().unwrap());
            flow += 1;
            lines.push(EventLine::Request(PathRequest { flow_id: flow, src, dst }));
        }
        blocks.push(EpochBlock { epoch: t as u64 + 1, reset: false, lines });
    }
    Ok(blocks)
}

/// Generates a scenario's events.
pub fn gen_scenario(
    topo: &Topology,
    strategy: &Strategy,
    scenario: &Scenario,
) -> Result<Vec<EpochBlock>, WorkloadError> {
    match scenario.kind {
        ScenarioKind::LinkFailure | ScenarioKind::SwitchFailure => gen_failure_events(topo, scenario),
        ScenarioKind::WeightUpdateBatches => gen_weight_update_batches(topo, strategy, scenario),
        ScenarioKind::PathRequestBatches => gen_path_requests(topo, scenario),
    }
}

/// Mixed churn: `epochs` epochs of `per_epoch` changes drawn from link
/// removals, link additions, utilization updates and (rarely) switch
/// removal or addition. Every change is valid against the topology as
/// evolved by the previous ones.
pub fn gen_mixed_events(topo: &Topology, epochs: usize, per_epoch: usize, seed: u64) -> Vec<EpochBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: BTreeSet<NodeId> = topo.nodes.iter().map(|n| n.id).collect();
    let mut links: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for l in &topo.links {
        *links.entry(undirected(l.a, l.b)).or_default() += 1;
    }
    let mut next_id = nodes.iter().next_back().map_or(0, |n| n.0 + 1);
    let mut blocks = Vec::with_capacity(epochs);
    for t in 0..epochs {
        let mut lines = Vec::with_capacity(per_epoch);
        for _ in 0..per_epoch {
            let roll = rng.gen_range(0..100);
            let change = if roll < 30 && !links.is_empty() {
                let (&key, &count) = links.iter().choose(&mut rng).unwrap();
                if count > 1 {
                    // Parallel links would need an explicit weight.
                    continue;
                }
                links.remove(&key);
                TopologyChange::RemoveLink { a: key.0, b: key.1, weight: None }
            } else if roll < 60 && !links.is_empty() {
                let (&key, &count) = links.iter().choose(&mut rng).unwrap();
                if count > 1 {
                    continue;
                }
                TopologyChange::UpdateWeight { a: key.0, b: key.1, utilization: rng.gen_range(1..=100) as f64 }
            } else if roll < 95 && nodes.len() >= 2 {
                let mut pick = nodes.iter().copied().choose_multiple(&mut rng, 2);
                pick.sort();
                let key = (pick[0], pick[1]);
                if links.contains_key(&key) {
                    continue;
                }
                links.insert(key, 1);
                let props = LinkProperties {
                    utilization: rng.gen_range(1..=100) as f64,
                    ..default_props()
                };
                TopologyChange::AddLink { a: key.0, b: key.1, props }
            } else if roll < 98 && nodes.len() > 3 {
                let id = *nodes.iter().choose(&mut rng).unwrap();
                nodes.remove(&id);
                links.retain(|k, _| k.0 != id && k.1 != id);
                TopologyChange::RemoveNode { id }
            } else {
                let id = NodeId(next_id);
                next_id += 1;
                nodes.insert(id);
                TopologyChange::AddNode { id, label: NodeLabel::Switch }
            };
            lines.push(EventLine::Change(change));
        }
        blocks.push(EpochBlock { epoch: t as u64 + 1, reset: false, lines });
    }
    blocks
}
