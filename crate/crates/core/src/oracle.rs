//! From-scratch reference solvers used to check the routing engine.
//!
//! Nothing here touches `routing_core`; only the candidate order of
//! `strategy` is shared. Path costs are accumulated from the destination
//! outwards, the same direction in which rules are derived, so additive
//! costs agree bit for bit with the engine.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use thiserror::Error;

use crate::graph_model::{GraphStore, NodeId};
use crate::routing_core::ForwardingRule;
use crate::strategy::{Candidate, Strategy};

/// Largest graph the brute-force widest-path enumeration accepts.
pub const BRUTEFORCE_MAX_NODES: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("weight {w} on {a} -> {b} is outside the strategy's domain")]
    InvalidWeight { a: NodeId, b: NodeId, w: f64 },
    #[error("{nodes} nodes exceed the brute-force limit of {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("strategy {0} is not supported by this solver")]
    WrongStrategy(Strategy),
}

/// Optimum for one ordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEntry {
    pub cost: f64,
    pub length: u32,
    /// Next hops that start some optimal path of optimal length.
    pub witnesses: BTreeSet<NodeId>,
}

impl OracleEntry {
    /// The next hop the shared tie-break picks.
    pub fn next(&self) -> NodeId {
        *self.witnesses.iter().next().expect("reachable pair has a witness")
    }
}

/// Optima for every reachable ordered pair; unreachable pairs are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleResult {
    pub pairs: BTreeMap<(NodeId, NodeId), OracleEntry>,
}

impl OracleResult {
    pub fn get(&self, src: NodeId, dst: NodeId) -> Option<&OracleEntry> {
        self.pairs.get(&(src, dst))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// First disagreement between an established view and the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub src: NodeId,
    pub dst: NodeId,
    pub expected: Option<OracleEntry>,
    pub found: Option<ForwardingRule>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pair ({}, {}): ", self.src, self.dst)?;
        match &self.expected {
            Some(e) => write!(
                f,
                "expected cost {} length {} next in {:?}",
                e.cost, e.length, e.witnesses
            )?,
            None => write!(f, "expected unreachable")?,
        }
        match &self.found {
            Some(r) => write!(f, ", found {r}"),
            None => write!(f, ", found no rule"),
        }
    }
}

/// `(neighbour, weight)` for every edge `neighbour -> node`, indexed by node.
fn in_edges(graph: &GraphStore) -> BTreeMap<NodeId, Vec<(NodeId, f64)>> {
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, f64)>> =
        graph.node_ids().map(|n| (n, Vec::new())).collect();
    for (key, _) in graph.edges() {
        adj.entry(key.dst).or_default().push((key.src, key.w.0));
    }
    adj
}

fn check_weights(graph: &GraphStore, strategy: &Strategy) -> Result<(), OracleError> {
    for (key, _) in graph.edges() {
        if !strategy.admits_weight(key.w.0) {
            return Err(OracleError::InvalidWeight { a: key.src, b: key.dst, w: key.w.0 });
        }
    }
    Ok(())
}

fn label_order(strategy: &Strategy, a: (f64, u32), b: (f64, u32)) -> Ordering {
    let probe = |(p_cost, p_length)| Candidate { next: NodeId(0), p_cost, p_length };
    strategy.compare(&probe(a), &probe(b))
}

struct QueueItem<'s> {
    strategy: &'s Strategy,
    cost: f64,
    length: u32,
    node: usize,
}

impl PartialEq for QueueItem<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueItem<'_> {}

impl PartialOrd for QueueItem<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueItem<'_> {
    // Reversed: the heap pops the preferred label first.
    fn cmp(&self, other: &Self) -> Ordering {
        label_order(self.strategy, (other.cost, other.length), (self.cost, self.length))
            .then(other.node.cmp(&self.node))
    }
}

/// Witness next hops of `src` given the optimal labels towards one
/// destination.
fn witnesses_from(
    src: usize,
    label: (f64, u32),
    labels: &[Option<(f64, u32)>],
    adj: &[Vec<(usize, f64)>],
    nodes: &[NodeId],
    strategy: &Strategy,
) -> BTreeSet<NodeId> {
    adj[src]
        .iter()
        .filter(|&&(u, w)| {
            labels[u].is_some_and(|(c, l)| (strategy.path_cost(w, c), l + 1) == label)
        })
        .map(|&(u, _)| nodes[u])
        .collect()
}

/// All-pairs optima for the additive strategies, one Dijkstra run per
/// destination over labels ordered by the strategy (cost, then hops).
pub fn apsp_additive(graph: &GraphStore, strategy: &Strategy) -> Result<OracleResult, OracleError> {
    if !strategy.is_additive() {
        return Err(OracleError::WrongStrategy(*strategy));
    }
    check_weights(graph, strategy)?;
    let (nodes, out, inn) = dense(graph);
    let mut result = OracleResult::default();
    for dst in 0..nodes.len() {
        let labels = dijkstra_to(dst, &out, strategy);
        for (src, label) in labels.iter().enumerate() {
            let Some(label) = *label else { continue };
            let witnesses = if src == dst {
                BTreeSet::from([nodes[dst]])
            } else {
                witnesses_from(src, label, &labels, &inn, &nodes, strategy)
            };
            result.pairs.insert(
                (nodes[src], nodes[dst]),
                OracleEntry { cost: label.0, length: label.1, witnesses },
            );
        }
    }
    Ok(result)
}

/// Dense adjacency: node list, then `(target, weight)` lists indexed by
/// position, once for edges leaving and once for edges entering a node.
type Dense = (Vec<NodeId>, Vec<Vec<(usize, f64)>>, Vec<Vec<(usize, f64)>>);

fn dense(graph: &GraphStore) -> Dense {
    let nodes: Vec<NodeId> = graph.node_ids().collect();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut out = vec![Vec::new(); nodes.len()];
    let mut inn = vec![Vec::new(); nodes.len()];
    for (key, _) in graph.edges() {
        let (a, b) = (index[&key.src], index[&key.dst]);
        out[a].push((b, key.w.0));
        inn[b].push((a, key.w.0));
    }
    (nodes, out, inn)
}

fn dijkstra_to(
    dst: usize,
    out: &[Vec<(usize, f64)>],
    strategy: &Strategy,
) -> Vec<Option<(f64, u32)>> {
    let mut best: Vec<Option<(f64, u32)>> = vec![None; out.len()];
    let mut done = vec![false; out.len()];
    let mut heap = BinaryHeap::new();
    best[dst] = Some((strategy.tautology_cost(), 0));
    heap.push(QueueItem { strategy, cost: strategy.tautology_cost(), length: 0, node: dst });
    while let Some(QueueItem { cost, length, node, .. }) = heap.pop() {
        if std::mem::replace(&mut done[node], true) {
            continue;
        }
        for &(s, w) in &out[node] {
            if done[s] {
                continue;
            }
            let label = (strategy.path_cost(w, cost), length + 1);
            let better = match best[s] {
                Some(cur) => label_order(strategy, label, cur) == Ordering::Less,
                None => true,
            };
            if better {
                best[s] = Some(label);
                heap.push(QueueItem { strategy, cost: label.0, length: label.1, node: s });
            }
        }
    }
    best
}

/// Shortest-widest optima by enumerating every simple path from every
/// source. Ties on width go to fewer hops, then to the smaller next hop.
pub fn widest_paths_bruteforce(
    graph: &GraphStore,
    strategy: &Strategy,
) -> Result<OracleResult, OracleError> {
    if strategy.is_additive() {
        return Err(OracleError::WrongStrategy(*strategy));
    }
    if graph.node_count() > BRUTEFORCE_MAX_NODES {
        return Err(OracleError::TooLarge {
            nodes: graph.node_count(),
            limit: BRUTEFORCE_MAX_NODES,
        });
    }
    check_weights(graph, strategy)?;
    let adj = in_edges(graph);
    let mut result = OracleResult::default();
    for src in graph.node_ids() {
        let mut found: BTreeMap<NodeId, OracleEntry> = BTreeMap::new();
        found.insert(
            src,
            OracleEntry {
                cost: strategy.tautology_cost(),
                length: 0,
                witnesses: BTreeSet::from([src]),
            },
        );
        let mut visited = BTreeSet::from([src]);
        for &(first, w) in &adj[&src] {
            if visited.contains(&first) {
                continue;
            }
            visited.insert(first);
            enumerate(
                first,
                first,
                strategy.path_cost(w, strategy.tautology_cost()),
                1,
                &adj,
                strategy,
                &mut visited,
                &mut found,
            );
            visited.remove(&first);
        }
        for (dst, entry) in found {
            result.pairs.insert((src, dst), entry);
        }
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    node: NodeId,
    first: NodeId,
    width: f64,
    hops: u32,
    adj: &BTreeMap<NodeId, Vec<(NodeId, f64)>>,
    strategy: &Strategy,
    visited: &mut BTreeSet<NodeId>,
    found: &mut BTreeMap<NodeId, OracleEntry>,
) {
    match found.get_mut(&node) {
        None => {
            found.insert(
                node,
                OracleEntry { cost: width, length: hops, witnesses: BTreeSet::from([first]) },
            );
        }
        Some(entry) => match label_order(strategy, (width, hops), (entry.cost, entry.length)) {
            Ordering::Less => {
                *entry = OracleEntry { cost: width, length: hops, witnesses: BTreeSet::from([first]) }
            }
            Ordering::Equal => {
                entry.witnesses.insert(first);
            }
            Ordering::Greater => {}
        },
    }
    for &(next, w) in &adj[&node] {
        if visited.contains(&next) {
            continue;
        }
        visited.insert(next);
        enumerate(next, first, width.min(w), hops + 1, adj, strategy, visited, found);
        visited.remove(&next);
    }
}

/// Shortest-widest optima in polynomial time: for each destination,
/// bottleneck Bellman-Ford layered by hop count. Agrees with the brute
/// force (widths of walks are never better than those of the simple paths
/// inside them) and serves graphs too large to enumerate.
pub fn widest_paths_layered(
    graph: &GraphStore,
    strategy: &Strategy,
) -> Result<OracleResult, OracleError> {
    if strategy.is_additive() {
        return Err(OracleError::WrongStrategy(*strategy));
    }
    check_weights(graph, strategy)?;
    let nodes: Vec<NodeId> = graph.node_ids().collect();
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = nodes.len();
    // Edges `u -> s` as (s, u, w) in dense indices.
    let edges: Vec<(usize, usize, f64)> = graph
        .edges()
        .map(|(k, _)| (index[&k.dst], index[&k.src], k.w.0))
        .collect();
    let mut result = OracleResult::default();
    for (d, &dst) in nodes.iter().enumerate() {
        // layers[h][v]: widest walk from v to dst with at most h hops.
        let mut layers: Vec<Vec<Option<f64>>> = vec![vec![None; n]];
        layers[0][d] = Some(strategy.tautology_cost());
        for h in 1..n.max(1) {
            let prev = &layers[h - 1];
            let mut cur = prev.clone();
            for &(s, u, w) in &edges {
                if let Some(c) = prev[u] {
                    let width = strategy.path_cost(w, c);
                    if cur[s].is_none_or(|b| width > b) {
                        cur[s] = Some(width);
                    }
                }
            }
            let stable = cur == *prev;
            layers.push(cur);
            if stable {
                break;
            }
        }
        let last = layers.last().expect("layer zero");
        for (s, &src) in nodes.iter().enumerate() {
            let Some(width) = last[s] else { continue };
            let length = layers
                .iter()
                .position(|layer| layer[s] == Some(width))
                .expect("width attained") as u32;
            let witnesses = if s == d {
                BTreeSet::from([dst])
            } else {
                edges
                    .iter()
                    .filter(|&&(t, u, w)| {
                        t == s
                            && layers[length as usize - 1][u]
                                .is_some_and(|c| strategy.path_cost(w, c) == width)
                    })
                    .map(|&(_, u, _)| nodes[u])
                    .collect()
            };
            result.pairs.insert((src, dst), OracleEntry { cost: width, length, witnesses });
        }
    }
    Ok(result)
}

/// Picks the solver for `strategy`: Dijkstra for additive strategies,
/// enumeration for small shortest-widest graphs, the layered solver above
/// that.
pub fn solve(graph: &GraphStore, strategy: &Strategy) -> Result<OracleResult, OracleError> {
    if strategy.is_additive() {
        apsp_additive(graph, strategy)
    } else if graph.node_count() <= BRUTEFORCE_MAX_NODES {
        widest_paths_bruteforce(graph, strategy)
    } else {
        widest_paths_layered(graph, strategy)
    }
}

/// Pairs whose optimum (cost, hop count or tie-broken next hop) differs
/// between two graphs, including pairs that become reachable or
/// unreachable.
pub fn affected_pairs(
    before: &GraphStore,
    after: &GraphStore,
    strategy: &Strategy,
) -> Result<BTreeSet<(NodeId, NodeId)>, OracleError> {
    let a = solve(before, strategy)?;
    let b = solve(after, strategy)?;
    Ok(diff(&a, &b))
}

/// One optimal path from `src` to `dst` under the shared tie-break, or
/// `None` if `dst` is unreachable. Additive strategies only; a single
/// Dijkstra pass towards `dst`.
pub fn best_path(
    graph: &GraphStore,
    strategy: &Strategy,
    src: NodeId,
    dst: NodeId,
) -> Result<Option<Vec<NodeId>>, OracleError> {
    if !strategy.is_additive() {
        return Err(OracleError::WrongStrategy(*strategy));
    }
    check_weights(graph, strategy)?;
    let (nodes, out, inn) = dense(graph);
    let index = |n: NodeId| nodes.binary_search(&n).ok();
    let (Some(s), Some(t)) = (index(src), index(dst)) else {
        return Ok(None);
    };
    let labels = dijkstra_to(t, &out, strategy);
    if labels[s].is_none() {
        return Ok(None);
    }
    let mut hops = vec![src];
    let mut at = s;
    while at != t {
        let label = labels[at].expect("on a path to dst");
        let next = witnesses_from(at, label, &labels, &inn, &nodes, strategy)
            .into_iter()
            .next()
            .expect("reachable node has a witness");
        hops.push(next);
        at = index(next).expect("known node");
    }
    Ok(Some(hops))
}

/// Pairs on which two oracle results disagree.
pub fn diff(a: &OracleResult, b: &OracleResult) -> BTreeSet<(NodeId, NodeId)> {
    let keys: BTreeSet<_> = a.pairs.keys().chain(b.pairs.keys()).copied().collect();
    keys.into_iter()
        .filter(|k| match (a.pairs.get(k), b.pairs.get(k)) {
            (Some(x), Some(y)) => x.cost != y.cost || x.length != y.length || x.next() != y.next(),
            _ => true,
        })
        .collect()
}

/// Relative tolerance for comparing real-valued costs.
pub const COST_TOLERANCE: f64 = 1e-9;

fn costs_match(expected: f64, found: f64) -> bool {
    expected == found || (expected - found).abs() <= COST_TOLERANCE * expected.abs().max(found.abs())
}

/// Checks an established view against the oracle: same reachable pairs,
/// optimal cost (within [`COST_TOLERANCE`]), optimal length, and a next hop
/// from the witness set. With `strict_next` the next hop must also be the
/// tie-break choice.
pub fn check_established(
    rules: &BTreeMap<(NodeId, NodeId), ForwardingRule>,
    oracle: &OracleResult,
    strict_next: bool,
) -> Result<(), Box<Divergence>> {
    let keys: BTreeSet<_> = rules.keys().chain(oracle.pairs.keys()).copied().collect();
    for (src, dst) in keys {
        let found = rules.get(&(src, dst));
        let expected = oracle.get(src, dst);
        let ok = match (expected, found) {
            (Some(e), Some(r)) => {
                costs_match(e.cost, r.p_cost)
                    && e.length == r.p_length
                    && if strict_next { e.next() == r.next } else { e.witnesses.contains(&r.next) }
            }
            _ => false,
        };
        if !ok {
            return Err(Box::new(Divergence {
                src,
                dst,
                expected: expected.cloned(),
                found: found.copied(),
            }));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::{LinkProperties, NodeLabel, NodeRecord, TopologyChange};
    use crate::strategy::StrategyKind;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    /// Undirected graph whose link weight under `strategy` is the given value.
    fn graph(strategy: &Strategy, nodes: u32, links: &[(u32, u32, f64)]) -> GraphStore {
        let mut g = GraphStore::new();
        for i in 0..nodes {
            g.add_node(NodeRecord::new(n(i), NodeLabel::Switch)).unwrap();
        }
        for &(a, b, w) in links {
            let props = if strategy.is_additive() {
                LinkProperties::new(100.0, w, 0.0).unwrap()
            } else {
                LinkProperties::new(w, 0.0, 0.0).unwrap()
            };
            g.apply_change(&TopologyChange::AddLink { a: n(a), b: n(b), props }, strategy)
                .unwrap();
        }
        g
    }

    fn sd() -> Strategy {
        Strategy::new(StrategyKind::SdUtilization)
    }

    fn wide() -> Strategy {
        Strategy::new(StrategyKind::ShortestWidest)
    }

    #[test]
    fn triangle_optimum() {
        let g = graph(&sd(), 3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        let r = apsp_additive(&g, &sd()).unwrap();
        let e = r.get(n(0), n(2)).unwrap();
        assert_eq!((e.cost, e.length), (2.0, 2));
        assert_eq!(e.witnesses, BTreeSet::from([n(1)]));
        assert_eq!(r.len(), 9);
    }

    #[test]
    fn star_and_disconnected() {
        let hop = Strategy::new(StrategyKind::HopCount);
        let g = graph(&hop, 5, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]);
        let r = apsp_additive(&g, &hop).unwrap();
        assert_eq!(r.get(n(0), n(3)).unwrap().cost, 1.0);
        assert_eq!(r.get(n(1), n(3)).unwrap().witnesses, BTreeSet::from([n(0)]));
        assert!(r.get(n(0), n(4)).is_none());
        assert_eq!(r.get(n(4), n(4)).unwrap().length, 0);
    }

    #[test]
    fn equal_cost_witnesses() {
        // Square: both neighbours of 0 lead to 2 at equal cost.
        let g = graph(&sd(), 4, &[(0, 1, 1.0), (1, 2, 1.0), (0, 3, 1.0), (3, 2, 1.0)]);
        let r = apsp_additive(&g, &sd()).unwrap();
        let e = r.get(n(0), n(2)).unwrap();
        assert_eq!(e.witnesses, BTreeSet::from([n(1), n(3)]));
        assert_eq!(e.next(), n(1));
    }

    #[test]
    fn rejects_invalid_input() {
        let g = graph(&wide(), 2, &[(0, 1, 2.0)]);
        assert!(matches!(
            apsp_additive(&g, &wide()),
            Err(OracleError::WrongStrategy(_))
        ));
        let mut big = GraphStore::new();
        for i in 0..15 {
            big.add_node(NodeRecord::new(n(i), NodeLabel::Switch)).unwrap();
        }
        assert_eq!(
            widest_paths_bruteforce(&big, &wide()),
            Err(OracleError::TooLarge { nodes: 15, limit: 14 })
        );
    }

    #[test]
    fn widest_parallel_routes() {
        // 0-1-3 has width 3, 0-2-3 width 5.
        let g = graph(&wide(), 4, &[(0, 1, 3.0), (1, 3, 9.0), (0, 2, 5.0), (2, 3, 8.0)]);
        let r = widest_paths_bruteforce(&g, &wide()).unwrap();
        let e = r.get(n(0), n(3)).unwrap();
        assert_eq!((e.cost, e.length, e.next()), (5.0, 2, n(2)));
    }

    #[test]
    fn widest_prefers_direct_link_on_equal_width() {
        let g = graph(&wide(), 3, &[(0, 2, 7.0), (0, 1, 7.0), (1, 2, 7.0)]);
        let r = widest_paths_bruteforce(&g, &wide()).unwrap();
        let e = r.get(n(0), n(2)).unwrap();
        assert_eq!((e.cost, e.length, e.next()), (7.0, 1, n(2)));
        let single = graph(&wide(), 2, &[(0, 1, 4.0)]);
        assert_eq!(widest_paths_bruteforce(&single, &wide()).unwrap().get(n(0), n(1)).unwrap().cost, 4.0);
    }

    #[test]
    fn affected_pairs_examples() {
        let g = graph(&sd(), 3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        assert!(affected_pairs(&g, &g, &sd()).unwrap().is_empty());
        let mut cut = g.clone();
        cut.apply_change(&TopologyChange::RemoveLink { a: n(0), b: n(1), weight: None }, &sd())
            .unwrap();
        let pairs: Vec<_> = affected_pairs(&g, &cut, &sd())
            .unwrap()
            .into_iter()
            .map(|(a, b)| (a.0, b.0))
            .collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 0), (2, 0)]);
    }

    #[test]
    fn leaf_cut_affects_all_its_pairs() {
        let g = graph(&sd(), 3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let mut cut = g.clone();
        cut.apply_change(&TopologyChange::RemoveLink { a: n(1), b: n(2), weight: None }, &sd())
            .unwrap();
        let got = affected_pairs(&g, &cut, &sd()).unwrap();
        let want: BTreeSet<_> = [(0, 2), (1, 2), (2, 0), (2, 1)]
            .into_iter()
            .map(|(a, b)| (n(a), n(b)))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn check_reports_first_divergence() {
        let g = graph(&sd(), 3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        let oracle = apsp_additive(&g, &sd()).unwrap();
        let mut rules: BTreeMap<(NodeId, NodeId), ForwardingRule> = oracle
            .pairs
            .iter()
            .map(|(&(s, d), e)| {
                let r = ForwardingRule {
                    src: s, dst: d, next: e.next(), p_cost: e.cost, p_length: e.length, delta: 1,
                };
                ((s, d), r)
            })
            .collect();
        check_established(&rules, &oracle, true).unwrap();
        rules.get_mut(&(n(0), n(2))).unwrap().next = n(2);
        let d = check_established(&rules, &oracle, false).unwrap_err();
        assert_eq!((d.src, d.dst), (n(0), n(2)));
        rules.remove(&(n(2), n(0)));
        rules.get_mut(&(n(0), n(2))).unwrap().next = n(1);
        let d = check_established(&rules, &oracle, false).unwrap_err();
        assert!(d.found.is_none());
    }
}
