//! End-to-end paths read off established rules by following next hops.
//! Nothing is cached; every request walks the rules again.

use std::fmt;

use thiserror::Error;

use crate::graph_model::{GraphStore, NodeId};
use crate::routing_core::{Engine, ForwardingRule};
use crate::strategy::Strategy;

/// `req <flow_id> <src> <dst>`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PathRequest {
    pub flow_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub hops: Vec<NodeId>,
    pub cost: f64,
    pub length: u32,
}

impl Path {
    pub fn src(&self) -> NodeId {
        self.hops[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.hops.last().expect("non-empty path")
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.hops.contains(&node)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hops: Vec<String> = self.hops.iter().map(|h| h.to_string()).collect();
        write!(f, "path={} cost={} length={}", hops.join("-"), self.cost, self.length)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("no route from {src} to {dst} (missing rule at {at})")]
    Unreachable { src: NodeId, dst: NodeId, at: NodeId },
    #[error("walk from {src} to {dst} exceeded {steps} steps")]
    CycleDetected { src: NodeId, dst: NodeId, steps: usize },
}

/// Read access to established rules.
pub trait RuleView {
    fn established(&self, src: NodeId, dst: NodeId) -> Option<ForwardingRule>;

    /// The rule `(src, dst)` exports with exactly `length` hops. Views that
    /// export one label per pair only have the established one.
    fn label(&self, src: NodeId, dst: NodeId, length: u32) -> Option<ForwardingRule> {
        self.established(src, dst).filter(|r| r.p_length == length)
    }

    fn node_count(&self) -> usize;
}

impl RuleView for Engine {
    fn established(&self, src: NodeId, dst: NodeId) -> Option<ForwardingRule> {
        Engine::established(self, src, dst)
    }

    fn label(&self, src: NodeId, dst: NodeId, length: u32) -> Option<ForwardingRule> {
        self.exported_with_length(src, dst, length)
    }

    fn node_count(&self) -> usize {
        self.graph().node_count()
    }
}

/// Walks next hops from `src` towards `dst`.
///
/// Each step continues with the next hop's label that is one hop shorter,
/// which for additive strategies is simply its established rule.
pub fn retrieve(view: &impl RuleView, src: NodeId, dst: NodeId) -> Result<Path, RetrievalError> {
    let unreachable = |at| RetrievalError::Unreachable { src, dst, at };
    let first = view.established(src, dst).ok_or(unreachable(src))?;
    let bound = view.node_count();
    let mut hops = Vec::with_capacity(first.p_length as usize + 1);
    hops.push(src);
    let mut rule = first;
    while rule.p_length > 0 {
        hops.push(rule.next);
        if hops.len() > bound {
            return Err(RetrievalError::CycleDetected { src, dst, steps: bound });
        }
        rule = view
            .label(rule.next, dst, rule.p_length - 1)
            .ok_or(unreachable(rule.next))?;
    }
    if rule.src != dst {
        return Err(unreachable(rule.src));
    }
    Ok(Path { hops, cost: first.p_cost, length: first.p_length })
}

/// One result per request, in request order.
pub fn retrieve_batch(
    view: &impl RuleView,
    requests: &[PathRequest],
) -> Vec<Result<Path, RetrievalError>> {
    requests.iter().map(|r| retrieve(view, r.src, r.dst)).collect()
}

/// Consecutive hop pairs of `path`.
pub fn path_links(path: &Path) -> Vec<(NodeId, NodeId)> {
    path.hops.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Recomputes the cost of `hops` from the graph, folding from the last hop
/// backwards and taking the best parallel link of each pair. `None` if some
/// consecutive pair is not linked.
pub fn fold_cost(graph: &GraphStore, strategy: &Strategy, hops: &[NodeId]) -> Option<f64> {
    let mut cost = strategy.tautology_cost();
    for pair in hops.windows(2).rev() {
        let weights = graph.links_between(pair[1], pair[0]);
        let w = weights
            .iter()
            .map(|(w, _)| *w)
            .reduce(|a, b| if strategy.maximizes() { a.max(b) } else { a.min(b) })?;
        cost = strategy.path_cost(w, cost);
    }
    Some(cost)
}
