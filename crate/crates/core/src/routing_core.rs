//! Incremental all-pairs routing as a delta join between the edge multiset
//! and the exported rule labels, iterated to a fixpoint per epoch.
//!
//! State per `(src, dst)` group is a multiset of candidate rules. A
//! candidate for `(s, d)` via neighbour `u` exists once per (edge `u -> s`,
//! exported label of `(u, d)`) pair, plus the tautology `(n, n, n)` for every
//! live node. The group's exported labels are the selection over its
//! candidates: the single best one for additive strategies, and the
//! width/hop-count frontier for shortest-widest (whose selection is not
//! preserved by extension). Only changes to exported labels are joined back
//! with the graph.
//!
//! Candidate groups are sharded by rule source. Each round every shard folds
//! its inbox, recomputes the exports of the groups it touched and routes the
//! derived deltas to the owners of their new sources. An epoch is done when
//! no shard has pending deltas.
//!
//! A group whose best label gets worse withdraws its exports until the
//! retraction wave has drained, then re-exports. Without this, labels
//! that lost their support would climb towards the hop cap one round at a
//! time. The fixpoint is unique, so the schedule does not change results.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ordered_float::OrderedFloat;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use smallvec::SmallVec;
use thiserror::Error;

use crate::graph_model::{
    EdgeKey, EdgeRecord, GraphError, GraphStore, LinkProperties, NodeId, TopologyChange,
};
use crate::strategy::{Candidate, Strategy};

/// Per-hop routing entry: `src` reaches `dst` through `next`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardingRule {
    pub src: NodeId,
    pub dst: NodeId,
    pub next: NodeId,
    pub p_cost: f64,
    pub p_length: u32,
    pub delta: i64,
}

impl ForwardingRule {
    pub fn tautology(node: NodeId, strategy: &Strategy) -> Self {
        ForwardingRule {
            src: node,
            dst: node,
            next: node,
            p_cost: strategy.tautology_cost(),
            p_length: 0,
            delta: 1,
        }
    }

    pub fn candidate(&self) -> Candidate {
        Candidate {
            next: self.next,
            p_cost: self.p_cost,
            p_length: self.p_length,
        }
    }

    /// Hashable identity of the rule including its delta.
    pub fn key(&self) -> (NodeId, NodeId, NodeId, OrderedFloat<f64>, u32, i64) {
        (
            self.src,
            self.dst,
            self.next,
            OrderedFloat(self.p_cost),
            self.p_length,
            self.delta,
        )
    }

    /// `epoch,src,dst,next,p_cost,p_length,delta`
    pub fn csv_row(&self, epoch: u64) -> String {
        format!(
            "{epoch},{},{},{},{},{},{}",
            self.src, self.dst, self.next, self.p_cost, self.p_length, self.delta
        )
    }

    pub const CSV_HEADER: &'static str = "epoch,src,dst,next,p_cost,p_length,delta";
}

impl fmt::Display for ForwardingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {}, {:+})",
            self.src, self.dst, self.next, self.p_cost, self.p_length, self.delta
        )
    }
}

/// Joins an exported rule `r` with an edge `l` where `r.src == l.src`:
/// `l.dst` reaches `r.dst` through `r.src`. Returns `None` when the derived
/// path would reach `max_length` hops or more.
pub fn derive(
    r: &ForwardingRule,
    l: &EdgeRecord,
    strategy: &Strategy,
    max_length: u32,
) -> Option<ForwardingRule> {
    debug_assert_eq!(r.src, l.src);
    let p_length = r.p_length + 1;
    if p_length >= max_length {
        return None;
    }
    Some(ForwardingRule {
        src: l.dst,
        dst: r.dst,
        next: r.src,
        p_cost: strategy.path_cost(l.w, r.p_cost),
        p_length,
        delta: l.delta * r.delta,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no fixpoint after {rounds} rounds (limit {limit}); the strategy is not monotone")]
    NonConvergence { rounds: usize, limit: usize },
    #[error("worker count must be at least 1")]
    NoWorkers,
}

/// Net changes of one epoch.
#[derive(Clone, Debug, Default)]
pub struct EpochOutput {
    pub epoch: u64,
    /// Established-rule changes relative to the previous epoch, as `-1`
    /// retractions and `+1` establishments.
    pub changes: Vec<ForwardingRule>,
    /// Net directed edge changes applied to the graph.
    pub edge_changes: usize,
    pub rounds: usize,
    /// Propagation phases: one, plus one per re-export of withdrawn groups.
    pub phases: usize,
}

impl EpochOutput {
    /// Distinct `(src, dst)` pairs whose established rule changed.
    pub fn changed_pairs(&self) -> std::collections::BTreeSet<(NodeId, NodeId)> {
        self.changes.iter().map(|r| (r.src, r.dst)).collect()
    }
}

/// Sort key of a candidate inside its group: preference order of the
/// strategy (cost, then hops, then next hop).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct RankKey {
    primary: OrderedFloat<f64>,
    len: u32,
    next: NodeId,
}

impl RankKey {
    fn new(strategy: &Strategy, next: NodeId, p_cost: f64, len: u32) -> Self {
        RankKey {
            primary: OrderedFloat(strategy.rank_primary(p_cost)),
            len,
            next,
        }
    }

    fn cost(&self, strategy: &Strategy) -> f64 {
        strategy.cost_from_rank(self.primary.0)
    }

    fn rule(&self, src: NodeId, dst: NodeId, strategy: &Strategy) -> ForwardingRule {
        ForwardingRule {
            src,
            dst,
            next: self.next,
            p_cost: self.cost(strategy),
            p_length: self.len,
            delta: 1,
        }
    }
}

type Labels = SmallVec<[RankKey; 1]>;

#[derive(Clone, Debug, Default)]
struct Group {
    /// Sorted by key; multiplicities are strictly positive at rest.
    cands: Vec<(RankKey, i64)>,
    exported: Labels,
    withheld: bool,
    touched: bool,
}

impl Group {
    fn add(&mut self, key: RankKey, delta: i64) {
        match self.cands.binary_search_by(|(k, _)| k.cmp(&key)) {
            Ok(i) => {
                self.cands[i].1 += delta;
                if self.cands[i].1 == 0 {
                    self.cands.remove(i);
                }
            }
            Err(i) => self.cands.insert(i, (key, delta)),
        }
    }

    fn is_empty(&self) -> bool {
        self.cands.is_empty() && self.exported.is_empty() && !self.withheld
    }
}

fn select(cands: &[(RankKey, i64)], strategy: &Strategy) -> Labels {
    let mut out = Labels::new();
    if strategy.is_additive() {
        if let Some((k, _)) = cands.first() {
            out.push(*k);
        }
        return out;
    }
    // Candidates arrive widest first; keep those strictly shorter than
    // every wider (or equally wide, earlier) one.
    let mut shortest = u32::MAX;
    for (k, _) in cands {
        if k.len < shortest {
            shortest = k.len;
            out.push(*k);
        }
    }
    out
}

fn worsened(old: &[RankKey], new: &[RankKey], strategy: &Strategy) -> bool {
    old.iter().any(|o| {
        !new.iter().any(|n| {
            strategy.dominates(n.cost(strategy), n.len, o.cost(strategy), o.len)
        })
    })
}

#[derive(Clone, Copy, Debug)]
struct Delta {
    src: NodeId,
    dst: NodeId,
    key: RankKey,
    delta: i64,
}

struct RoundCtx<'a> {
    graph: &'a GraphStore,
    strategy: Strategy,
    /// Derived rules must have fewer hops than this.
    max_length: u32,
    workers: usize,
    release: bool,
}

fn owner(node: NodeId, workers: usize) -> usize {
    node.0 as usize % workers
}

#[derive(Default)]
struct RoundOut {
    outboxes: Vec<Vec<Delta>>,
    withheld: usize,
}

impl RoundOut {
    fn new(workers: usize) -> Self {
        RoundOut {
            outboxes: vec![Vec::new(); workers],
            withheld: 0,
        }
    }
}

/// Candidate groups of the sources owned by one worker.
#[derive(Clone, Debug, Default)]
struct Shard {
    tables: FxHashMap<NodeId, FxHashMap<NodeId, Group>>,
    /// Established label of every group touched this epoch, as of the
    /// start of the epoch.
    before: FxHashMap<(NodeId, NodeId), Option<RankKey>>,
    withheld: Vec<(NodeId, NodeId)>,
}

impl Shard {
    fn group(&self, src: NodeId, dst: NodeId) -> Option<&Group> {
        self.tables.get(&src)?.get(&dst)
    }

    fn established(&self, src: NodeId, dst: NodeId) -> Option<RankKey> {
        self.group(src, dst)?.exported.first().copied()
    }

    /// Joins exported labels of `src` with its out-edges, scaled by `sign`.
    fn emit(
        ctx: &RoundCtx<'_>,
        src: NodeId,
        dst: NodeId,
        label: &RankKey,
        sign: i64,
        out: &mut RoundOut,
    ) {
        let len = label.len + 1;
        if len >= ctx.max_length {
            return;
        }
        let cost = label.cost(&ctx.strategy);
        for (nbr, w, entry) in ctx.graph.out_edges(src) {
            let key = RankKey::new(&ctx.strategy, src, ctx.strategy.path_cost(w, cost), len);
            out.outboxes[owner(nbr, ctx.workers)].push(Delta {
                src: nbr,
                dst,
                key,
                delta: sign * entry.multiplicity,
            });
        }
    }

    /// Round-zero derivations from the epoch's edge changes and from a
    /// change of the hop cap.
    fn seed(
        &self,
        delta_g: &[EdgeRecord],
        old_max: u32,
        ctx: &RoundCtx<'_>,
        out: &mut RoundOut,
    ) {
        let strategy = &ctx.strategy;
        for rec in delta_g {
            let Some(table) = self.tables.get(&rec.src) else {
                continue;
            };
            for (&dst, group) in table {
                for label in &group.exported {
                    let len = label.len + 1;
                    if len >= old_max {
                        continue;
                    }
                    let cost = strategy.path_cost(rec.w, label.cost(strategy));
                    out.outboxes[owner(rec.dst, ctx.workers)].push(Delta {
                        src: rec.dst,
                        dst,
                        key: RankKey::new(strategy, rec.src, cost, len),
                        delta: rec.delta,
                    });
                }
            }
        }
        if old_max != ctx.max_length {
            let (lo, hi, sign) = if ctx.max_length > old_max {
                (old_max, ctx.max_length, 1)
            } else {
                (ctx.max_length, old_max, -1)
            };
            // Derived lengths in [lo, hi) enter or leave the admissible range.
            for (&src, table) in &self.tables {
                for (&dst, group) in table {
                    for label in &group.exported {
                        let len = label.len + 1;
                        if len < lo || len >= hi {
                            continue;
                        }
                        let cost = label.cost(strategy);
                        for (nbr, w, entry) in ctx.graph.out_edges(src) {
                            out.outboxes[owner(nbr, ctx.workers)].push(Delta {
                                src: nbr,
                                dst,
                                key: RankKey::new(strategy, src, strategy.path_cost(w, cost), len),
                                delta: sign * entry.multiplicity,
                            });
                        }
                    }
                }
            }
        }
    }

    fn round(&mut self, inbox: Vec<Delta>, ctx: &RoundCtx<'_>) -> RoundOut {
        let mut out = RoundOut::new(ctx.workers);
        let mut touched: Vec<(NodeId, NodeId)> = Vec::new();
        for d in inbox {
            let g = self
                .tables
                .entry(d.src)
                .or_default()
                .entry(d.dst)
                .or_default();
            if !g.touched {
                g.touched = true;
                touched.push((d.src, d.dst));
            }
            g.add(d.key, d.delta);
        }
        if ctx.release {
            for (s, d) in std::mem::take(&mut self.withheld) {
                let g = self.tables.get_mut(&s).and_then(|t| t.get_mut(&d));
                if let Some(g) = g {
                    g.withheld = false;
                    if !g.touched {
                        g.touched = true;
                        touched.push((s, d));
                    }
                }
            }
        }

        let strategy = ctx.strategy;
        for (s, d) in touched {
            let table = self.tables.get_mut(&s).expect("touched table");
            let g = table.get_mut(&d).expect("touched group");
            g.touched = false;
            debug_assert!(
                g.cands.iter().all(|(_, m)| *m > 0),
                "negative candidate multiplicity in group ({s}, {d})"
            );
            self.before
                .entry((s, d))
                .or_insert_with(|| g.exported.first().copied());

            let mut new = if g.withheld {
                Labels::new()
            } else {
                select(&g.cands, &strategy)
            };
            if !g.withheld && worsened(&g.exported, &new, &strategy) {
                g.withheld = true;
                self.withheld.push((s, d));
                new.clear();
            }
            if new != g.exported {
                let old = std::mem::replace(&mut g.exported, new);
                for label in old.iter().filter(|l| !g.exported.contains(l)) {
                    Self::emit(ctx, s, d, label, -1, &mut out);
                }
                for label in g.exported.iter().filter(|l| !old.contains(l)) {
                    Self::emit(ctx, s, d, label, 1, &mut out);
                }
            }
            if g.is_empty() {
                table.remove(&d);
                if table.is_empty() {
                    self.tables.remove(&s);
                }
            }
        }
        out.withheld = self.withheld.len();
        out
    }

    fn finish_epoch(&mut self, strategy: &Strategy, changes: &mut Vec<ForwardingRule>) {
        for ((s, d), old) in self.before.drain() {
            let new = self
                .tables
                .get(&s)
                .and_then(|t| t.get(&d))
                .and_then(|g| g.exported.first().copied());
            if old == new {
                continue;
            }
            if let Some(o) = old {
                let mut r = o.rule(s, d, strategy);
                r.delta = -1;
                changes.push(r);
            }
            if let Some(n) = new {
                changes.push(n.rule(s, d, strategy));
            }
        }
    }
}

/// The routing engine: graph, candidate rules and their established view.
#[derive(Clone)]
pub struct Engine {
    strategy: Strategy,
    graph: GraphStore,
    shards: Vec<Shard>,
    pool: Option<Arc<rayon::ThreadPool>>,
    epoch: u64,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("strategy", &self.strategy)
            .field("workers", &self.shards.len())
            .field("nodes", &self.graph.node_count())
            .field("edges", &self.graph.edge_count())
            .field("epoch", &self.epoch)
            .finish()
    }
}

fn max_length(node_count: usize) -> u32 {
    // Derived rules may have at most |V| - 1 hops.
    node_count.max(1) as u32
}

impl Engine {
    /// An engine over an empty graph.
    pub fn new(strategy: Strategy, workers: usize) -> Result<Self, RoutingError> {
        if workers == 0 {
            return Err(RoutingError::NoWorkers);
        }
        let pool = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .thread_name(|i| format!("routing-worker-{i}"))
                .build()
                .expect("thread pool");
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(Engine {
            strategy,
            graph: GraphStore::new(),
            shards: vec![Shard::default(); workers],
            pool,
            epoch: 0,
        })
    }

    /// Computes all established rules of `topology` from the tautologies.
    pub fn initialize(
        topology: GraphStore,
        strategy: Strategy,
        workers: usize,
    ) -> Result<Self, RoutingError> {
        for (key, _) in topology.edges() {
            if !strategy.admits_weight(key.w.0) {
                return Err(GraphError::InvalidWeight {
                    a: key.src,
                    b: key.dst,
                    w: key.w.0,
                }
                .into());
            }
        }
        let mut engine = Engine::new(strategy, workers)?;
        let tautologies: Vec<(NodeId, i64)> = topology.node_ids().map(|n| (n, 1)).collect();
        engine.graph = topology;
        let old_max = engine.max_length();
        engine.run(&[], &tautologies, old_max)?;
        Ok(engine)
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn graph(&self) -> &GraphStore {
        &self.graph
    }

    pub fn workers(&self) -> usize {
        self.shards.len()
    }

    /// Number of the last processed epoch.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn max_length(&self) -> u32 {
        max_length(self.graph.node_count())
    }

    /// Applies one epoch of topology changes and runs the fixpoint.
    ///
    /// The batch is validated against a staged copy of the graph; on error
    /// the engine is left unchanged (except after `NonConvergence`, which
    /// leaves it unusable).
    pub fn step_epoch(&mut self, changes: &[TopologyChange]) -> Result<EpochOutput, RoutingError> {
        let mut staged = self.graph.clone();
        let mut net: BTreeMap<EdgeKey, (i64, LinkProperties)> = BTreeMap::new();
        let mut tautologies: BTreeMap<NodeId, i64> = BTreeMap::new();
        for change in changes {
            let records = staged.ingest(change, &self.strategy)?;
            staged.apply_deltas(&records)?;
            for rec in records {
                let slot = net.entry(rec.key()).or_insert((0, rec.props));
                slot.0 += rec.delta;
            }
            match change {
                TopologyChange::AddNode { id, .. } => *tautologies.entry(*id).or_default() += 1,
                TopologyChange::RemoveNode { id } => *tautologies.entry(*id).or_default() -= 1,
                _ => {}
            }
        }
        let delta_g: Vec<EdgeRecord> = net
            .into_iter()
            .filter(|(_, (d, _))| *d != 0)
            .map(|(k, (delta, props))| EdgeRecord {
                src: k.src,
                dst: k.dst,
                w: k.w.0,
                props,
                delta,
            })
            .collect();
        let tautologies: Vec<(NodeId, i64)> =
            tautologies.into_iter().filter(|(_, d)| *d != 0).collect();

        let old_max = self.max_length();
        self.graph = staged;
        self.epoch += 1;
        let mut out = self.run(&delta_g, &tautologies, old_max)?;
        out.edge_changes = delta_g.len();
        Ok(out)
    }

    fn run(
        &mut self,
        delta_g: &[EdgeRecord],
        tautologies: &[(NodeId, i64)],
        old_max: u32,
    ) -> Result<EpochOutput, RoutingError> {
        let workers = self.shards.len();
        let node_count = self.graph.node_count();
        let limit = node_count + 1;
        let mut ctx = RoundCtx {
            graph: &self.graph,
            strategy: self.strategy,
            max_length: max_length(node_count),
            workers,
            release: false,
        };

        let mut inboxes: Vec<Vec<Delta>> = vec![Vec::new(); workers];
        for &(n, d) in tautologies {
            inboxes[owner(n, workers)].push(Delta {
                src: n,
                dst: n,
                key: RankKey::new(&self.strategy, n, self.strategy.tautology_cost(), 0),
                delta: d,
            });
        }
        if !delta_g.is_empty() || old_max != ctx.max_length {
            let mut by_owner: Vec<Vec<EdgeRecord>> = vec![Vec::new(); workers];
            for rec in delta_g {
                by_owner[owner(rec.src, workers)].push(*rec);
            }
            let seeds = map_shards(&self.pool, &mut self.shards, by_owner, |shard, recs| {
                let mut out = RoundOut::new(workers);
                shard.seed(&recs, old_max, &ctx, &mut out);
                out
            });
            route(seeds, &mut inboxes);
        }

        let mut rounds = 0;
        let mut phase_rounds = 0;
        let mut phases = 1;
        let mut withheld = 0;
        loop {
            let pending = inboxes.iter().any(|b| !b.is_empty());
            ctx.release = !pending && withheld > 0;
            if !pending && !ctx.release {
                break;
            }
            if ctx.release {
                phases += 1;
                phase_rounds = 0;
            }
            let batch = std::mem::replace(&mut inboxes, vec![Vec::new(); workers]);
            let outs = map_shards(&self.pool, &mut self.shards, batch, |shard, inbox| {
                shard.round(inbox, &ctx)
            });
            withheld = outs.iter().map(|o| o.withheld).sum();
            route(outs, &mut inboxes);
            rounds += 1;
            phase_rounds += 1;
            if phase_rounds > limit {
                return Err(RoutingError::NonConvergence { rounds, limit });
            }
        }

        let mut changes = Vec::new();
        for shard in &mut self.shards {
            shard.finish_epoch(&self.strategy, &mut changes);
        }
        changes.sort_by(|a, b| {
            (a.src, a.dst, a.delta)
                .cmp(&(b.src, b.dst, b.delta))
                .then(a.p_cost.total_cmp(&b.p_cost))
        });
        Ok(EpochOutput {
            epoch: self.epoch,
            changes,
            edge_changes: 0,
            rounds,
            phases,
        })
    }

    /// The established rule for `(src, dst)`, if `dst` is reachable.
    pub fn established(&self, src: NodeId, dst: NodeId) -> Option<ForwardingRule> {
        let shard = &self.shards[owner(src, self.shards.len())];
        shard
            .established(src, dst)
            .map(|k| k.rule(src, dst, &self.strategy))
    }

    /// Every label `(src, dst)` currently exports, best first. Additive
    /// strategies export at most one; shortest-widest exports its
    /// width/hop-count frontier.
    pub fn exported(&self, src: NodeId, dst: NodeId) -> Vec<ForwardingRule> {
        let shard = &self.shards[owner(src, self.shards.len())];
        shard
            .group(src, dst)
            .map(|g| g.exported.iter().map(|k| k.rule(src, dst, &self.strategy)).collect())
            .unwrap_or_default()
    }

    /// The exported label of `(src, dst)` with exactly `length` hops.
    pub fn exported_with_length(
        &self,
        src: NodeId,
        dst: NodeId,
        length: u32,
    ) -> Option<ForwardingRule> {
        let shard = &self.shards[owner(src, self.shards.len())];
        shard
            .group(src, dst)?
            .exported
            .iter()
            .find(|k| k.len == length)
            .map(|k| k.rule(src, dst, &self.strategy))
    }

    /// Iterates over all established rules (unordered).
    pub fn established_rules(&self) -> impl Iterator<Item = ForwardingRule> + '_ {
        let strategy = self.strategy;
        self.shards.iter().flat_map(move |shard| {
            shard.tables.iter().flat_map(move |(&s, table)| {
                table.iter().filter_map(move |(&d, g)| {
                    g.exported.first().map(|k| k.rule(s, d, &strategy))
                })
            })
        })
    }

    pub fn established_count(&self) -> usize {
        self.established_rules().count()
    }

    /// Ordered copy of the established view.
    pub fn snapshot(&self) -> BTreeMap<(NodeId, NodeId), ForwardingRule> {
        self.established_rules().map(|r| ((r.src, r.dst), r)).collect()
    }

    /// Total number of stored candidate entries.
    pub fn candidate_count(&self) -> usize {
        self.shards
            .iter()
            .flat_map(|s| s.tables.values())
            .flat_map(|t| t.values())
            .map(|g| g.cands.len())
            .sum()
    }

    /// All stored candidates with their multiplicities.
    pub fn candidates(&self) -> Vec<(ForwardingRule, i64)> {
        let mut out = Vec::new();
        for shard in &self.shards {
            for (&s, table) in &shard.tables {
                for (&d, g) in table {
                    for (k, m) in &g.cands {
                        out.push((k.rule(s, d, &self.strategy), *m));
                    }
                }
            }
        }
        out
    }

    /// Verifies the stored state at rest: graph invariants, positive
    /// candidate multiplicities, exports equal to the selection over
    /// candidates, a tautology for every live node, and candidates equal to
    /// a from-scratch join of the graph with the exported labels.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.graph.check_invariants()?;
        let workers = self.shards.len();
        let mut expected: FxHashMap<(NodeId, NodeId, RankKey), i64> = FxHashMap::default();
        let max_len = self.max_length();
        for n in self.graph.node_ids() {
            let key = RankKey::new(&self.strategy, n, self.strategy.tautology_cost(), 0);
            *expected.entry((n, n, key)).or_default() += 1;
            match self.established(n, n) {
                Some(r) if r == ForwardingRule::tautology(n, &self.strategy) => {}
                other => return Err(format!("node {n} lacks its tautology: {other:?}")),
            }
        }
        for (i, shard) in self.shards.iter().enumerate() {
            if !shard.before.is_empty() || !shard.withheld.is_empty() {
                return Err(format!("shard {i} has leftover epoch state"));
            }
            for (&s, table) in &shard.tables {
                if owner(s, workers) != i {
                    return Err(format!("source {s} stored in shard {i}"));
                }
                for (&d, g) in table {
                    if g.withheld || g.touched {
                        return Err(format!("group ({s}, {d}) left withheld or touched"));
                    }
                    if g.cands.is_empty() && g.exported.is_empty() {
                        return Err(format!("empty group ({s}, {d}) not collected"));
                    }
                    if !g.cands.windows(2).all(|w| w[0].0 < w[1].0) {
                        return Err(format!("group ({s}, {d}) candidates out of order"));
                    }
                    if let Some((k, m)) = g.cands.iter().find(|(_, m)| *m <= 0) {
                        return Err(format!("candidate {k:?} of ({s}, {d}) has multiplicity {m}"));
                    }
                    if g.exported != select(&g.cands, &self.strategy) {
                        return Err(format!("group ({s}, {d}) exports a stale selection"));
                    }
                    for label in &g.exported {
                        let len = label.len + 1;
                        if len >= max_len {
                            continue;
                        }
                        let cost = label.cost(&self.strategy);
                        for (nbr, w, entry) in self.graph.out_edges(s) {
                            let key = RankKey::new(
                                &self.strategy,
                                s,
                                self.strategy.path_cost(w, cost),
                                len,
                            );
                            *expected.entry((nbr, d, key)).or_default() += entry.multiplicity;
                        }
                    }
                }
            }
        }
        let mut stored = 0usize;
        for shard in &self.shards {
            for (&s, table) in &shard.tables {
                for (&d, g) in table {
                    for (k, m) in &g.cands {
                        stored += 1;
                        if expected.get(&(s, d, *k)) != Some(m) {
                            return Err(format!(
                                "candidate {:?} x{m} expected x{:?}",
                                k.rule(s, d, &self.strategy),
                                expected.get(&(s, d, *k))
                            ));
                        }
                    }
                }
            }
        }
        if stored != expected.len() {
            return Err(format!(
                "{} derivable candidates but {stored} stored",
                expected.len()
            ));
        }
        Ok(())
    }
}

fn map_shards<I, F>(
    pool: &Option<Arc<rayon::ThreadPool>>,
    shards: &mut [Shard],
    inputs: Vec<I>,
    f: F,
) -> Vec<RoundOut>
where
    I: Send,
    F: Fn(&mut Shard, I) -> RoundOut + Sync,
{
    match pool {
        Some(pool) => pool.install(|| {
            shards
                .par_iter_mut()
                .zip(inputs.into_par_iter())
                .map(|(shard, input)| f(shard, input))
                .collect()
        }),
        None => shards
            .iter_mut()
            .zip(inputs)
            .map(|(shard, input)| f(shard, input))
            .collect(),
    }
}

/// Moves every outbox into the inbox of its target worker, in sender order.
fn route(outs: Vec<RoundOut>, inboxes: &mut [Vec<Delta>]) {
    for out in outs {
        for (target, mut batch) in out.outboxes.into_iter().enumerate() {
            inboxes[target].append(&mut batch);
        }
    }
}
