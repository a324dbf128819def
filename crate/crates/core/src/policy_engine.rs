//! Waypoint, NOT and backup policies evaluated over the routing engine.
//!
//! Waypoints are answered from the base rules, one retrieval per segment.
//! NOT and backup policies need rules of a graph with some nodes or links
//! taken out; those live in forks, full engine copies that follow every
//! later epoch except for the events that touch what they exclude. Policies
//! with the same exclusions share a fork.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph_model::{GraphStore, NodeId, TopologyChange};
use crate::path_retrieval::{path_links, retrieve, Path, RetrievalError};
use crate::routing_core::{Engine, RoutingError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyBody {
    /// Visit these nodes in order. Empty means a plain route.
    Waypoints(Vec<NodeId>),
    /// Avoid these nodes.
    NotNodes(BTreeSet<NodeId>),
    Backup,
    TwoWayMultipath,
    RedundantPaths,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub origin: NodeId,
    pub target: NodeId,
    pub body: PolicyBody,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy {text:?}: {reason}")]
    Syntax { text: String, reason: String },
    #[error("policy refers to unknown node {0}")]
    UnknownNode(NodeId),
    #[error("policy {0} already exists")]
    DuplicatePolicy(String),
    #[error("no policy {0}")]
    UnknownPolicy(String),
    #[error(transparent)]
    Unreachable(#[from] RetrievalError),
    #[error("no link-disjoint backup from {src} to {dst}")]
    NoBackup { src: NodeId, dst: NodeId },
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

impl Policy {
    /// Parses `S : c1 : ... : ck : T`. Constraints are node ids
    /// (waypoints), `!id` (nodes to avoid), or one of the keywords `backup`,
    /// `multipath` and `redundant`. `S : T` is a plain route.
    pub fn parse(id: &str, text: &str) -> Result<Policy, PolicyError> {
        let syntax = |reason: &str| PolicyError::Syntax {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let node = |tok: &str| -> Result<NodeId, PolicyError> {
            tok.parse().map_err(|_| syntax(&format!("bad node id {tok:?}")))
        };
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        if parts.len() < 2 {
            return Err(syntax("expected `S : ... : T`"));
        }
        let origin = node(parts[0])?;
        let target = node(parts[parts.len() - 1])?;
        let constraints = &parts[1..parts.len() - 1];
        if constraints.iter().any(|c| c.is_empty()) {
            return Err(syntax("empty constraint"));
        }
        let body = match constraints {
            [] => PolicyBody::Waypoints(Vec::new()),
            ["backup"] => PolicyBody::Backup,
            ["multipath"] => PolicyBody::TwoWayMultipath,
            ["redundant"] => PolicyBody::RedundantPaths,
            cs if cs.iter().all(|c| c.starts_with('!')) => {
                let nodes = cs
                    .iter()
                    .map(|c| node(c[1..].trim()))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                if nodes.contains(&origin) || nodes.contains(&target) {
                    return Err(syntax("cannot exclude the origin or target"));
                }
                PolicyBody::NotNodes(nodes)
            }
            cs if cs.iter().all(|c| !c.starts_with('!')) => {
                let nodes = cs.iter().map(|c| node(c)).collect::<Result<Vec<_>, _>>()?;
                PolicyBody::Waypoints(nodes)
            }
            _ => return Err(syntax("cannot mix waypoints and exclusions")),
        };
        Ok(Policy { id: id.to_string(), origin, target, body })
    }

    /// Every node the policy names.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = vec![self.origin, self.target];
        match &self.body {
            PolicyBody::Waypoints(ws) => out.extend(ws),
            PolicyBody::NotNodes(ns) => out.extend(ns),
            _ => {}
        }
        out
    }

    pub fn validate(&self, graph: &GraphStore) -> Result<(), PolicyError> {
        match self.nodes().into_iter().find(|n| !graph.contains_node(*n)) {
            Some(n) => Err(PolicyError::UnknownNode(n)),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} : ", self.origin)?;
        match &self.body {
            PolicyBody::Waypoints(ws) => {
                for w in ws {
                    write!(f, "{w} : ")?;
                }
            }
            PolicyBody::NotNodes(ns) => {
                for n in ns {
                    write!(f, "!{n} : ")?;
                }
            }
            PolicyBody::Backup => write!(f, "backup : ")?,
            PolicyBody::TwoWayMultipath => write!(f, "multipath : ")?,
            PolicyBody::RedundantPaths => write!(f, "redundant : ")?,
        }
        write!(f, "{}", self.target)
    }
}

/// Parses and checks node ids against `graph`.
pub fn parse(id: &str, text: &str, graph: &GraphStore) -> Result<Policy, PolicyError> {
    let policy = Policy::parse(id, text)?;
    policy.validate(graph)?;
    Ok(policy)
}

/// Waypoint route: segment paths concatenated at the waypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointPath {
    pub path: Path,
    /// Some node appears more than once.
    pub revisits: bool,
}

/// Retrieves `S -> c1 -> ... -> ck -> T` on `view` and joins the segments.
pub fn eval_waypoints(policy: &Policy, view: &Engine) -> Result<WaypointPath, PolicyError> {
    let PolicyBody::Waypoints(ws) = &policy.body else {
        return Err(PolicyError::Syntax {
            text: policy.to_string(),
            reason: "not a waypoint policy".into(),
        });
    };
    let strategy = view.strategy();
    let mut stops = Vec::with_capacity(ws.len() + 2);
    stops.push(policy.origin);
    stops.extend(ws);
    stops.push(policy.target);
    let mut hops = vec![policy.origin];
    let mut cost = strategy.tautology_cost();
    let mut length = 0;
    for leg in stops.windows(2) {
        let seg = retrieve(view, leg[0], leg[1])?;
        hops.extend_from_slice(&seg.hops[1..]);
        cost = strategy.concat_cost(cost, seg.cost);
        length += seg.length;
    }
    let distinct: BTreeSet<_> = hops.iter().collect();
    let revisits = distinct.len() != hops.len();
    Ok(WaypointPath { path: Path { hops, cost, length }, revisits })
}

/// What a fork leaves out of the base graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Exclusion {
    Nodes(BTreeSet<NodeId>),
    /// Undirected links, stored as `(min, max)`.
    Links(BTreeSet<(NodeId, NodeId)>),
}

impl Exclusion {
    fn links_of(path: &Path) -> Self {
        Exclusion::Links(
            path_links(path)
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect(),
        )
    }

    fn is_empty(&self) -> bool {
        match self {
            Exclusion::Nodes(s) => s.is_empty(),
            Exclusion::Links(s) => s.is_empty(),
        }
    }

    /// Whether the fork must ignore `change`.
    pub fn suppresses(&self, change: &TopologyChange) -> bool {
        match self {
            Exclusion::Nodes(nodes) => change.touches().iter().any(|n| nodes.contains(n)),
            Exclusion::Links(links) => match change.link() {
                Some((a, b)) => links.contains(&(a.min(b), a.max(b))),
                None => false,
            },
        }
    }

    /// Changes that take the excluded parts out of `graph`.
    fn removals(&self, graph: &GraphStore) -> Vec<TopologyChange> {
        match self {
            Exclusion::Nodes(nodes) => nodes
                .iter()
                .filter(|n| graph.contains_node(**n))
                .map(|&id| TopologyChange::RemoveNode { id })
                .collect(),
            Exclusion::Links(links) => {
                let mut out = Vec::new();
                for &(a, b) in links {
                    for (w, m) in graph.links_between(a, b) {
                        for _ in 0..m {
                            out.push(TopologyChange::RemoveLink { a, b, weight: Some(w) });
                        }
                    }
                }
                out
            }
        }
    }

    /// `graph` with the excluded parts removed.
    pub fn apply(&self, graph: &GraphStore, engine: &Engine) -> Result<GraphStore, PolicyError> {
        let mut g = graph.clone();
        for change in self.removals(graph) {
            g.apply_change(&change, engine.strategy())
                .map_err(RoutingError::from)?;
        }
        Ok(g)
    }
}

#[derive(Clone, Debug)]
struct Fork {
    engine: Engine,
    users: BTreeSet<String>,
}

/// Result of evaluating one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutcome {
    pub policy: String,
    pub path: Path,
    /// Link-disjoint alternative for backup and multipath policies.
    pub backup: Option<Path>,
    /// Waypoint route visits some node twice.
    pub revisits: bool,
}

impl PolicyOutcome {
    /// How the second path is used, if there is one.
    pub fn annotation(body: &PolicyBody) -> Option<&'static str> {
        match body {
            PolicyBody::Backup => Some("failover"),
            PolicyBody::TwoWayMultipath => Some("split"),
            PolicyBody::RedundantPaths => Some("duplicate"),
            _ => None,
        }
    }
}

/// Active policies and the forks they need.
#[derive(Clone, Debug, Default)]
pub struct PolicyEngine {
    policies: BTreeMap<String, Policy>,
    forks: BTreeMap<Exclusion, Fork>,
    bindings: BTreeMap<String, Exclusion>,
}

impl PolicyEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn policy(&self, id: &str) -> Option<&Policy> {
        self.policies.get(id)
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> + '_ {
        self.policies.values()
    }

    pub fn fork_count(&self) -> usize {
        self.forks.len()
    }

    /// The fork serving `id`, if it has one.
    pub fn fork_of(&self, id: &str) -> Option<(&Exclusion, &Engine)> {
        let ex = self.bindings.get(id)?;
        Some((ex, &self.forks[ex].engine))
    }

    /// Registers a policy. NOT policies get their fork right away.
    pub fn add(&mut self, policy: Policy, base: &Engine) -> Result<(), PolicyError> {
        if self.policies.contains_key(&policy.id) {
            return Err(PolicyError::DuplicatePolicy(policy.id));
        }
        policy.validate(base.graph())?;
        if let PolicyBody::NotNodes(nodes) = &policy.body {
            self.bind(&policy.id, Exclusion::Nodes(nodes.clone()), base)?;
        }
        self.policies.insert(policy.id.clone(), policy);
        Ok(())
    }

    /// Retires a policy and drops forks nobody uses any more.
    pub fn remove(&mut self, id: &str) -> Result<Policy, PolicyError> {
        let policy = self
            .policies
            .remove(id)
            .ok_or_else(|| PolicyError::UnknownPolicy(id.to_string()))?;
        self.unbind(id);
        Ok(policy)
    }

    fn unbind(&mut self, id: &str) {
        if let Some(ex) = self.bindings.remove(id) {
            let fork = self.forks.get_mut(&ex).expect("bound fork");
            fork.users.remove(id);
            if fork.users.is_empty() {
                self.forks.remove(&ex);
            }
        }
    }

    fn bind(&mut self, id: &str, ex: Exclusion, base: &Engine) -> Result<(), PolicyError> {
        if self.bindings.get(id) == Some(&ex) {
            return Ok(());
        }
        if !self.forks.contains_key(&ex) {
            let mut engine = base.clone();
            engine.step_epoch(&ex.removals(base.graph()))?;
            self.forks.insert(ex.clone(), Fork { engine, users: BTreeSet::new() });
        }
        self.unbind(id);
        self.forks.get_mut(&ex).expect("fork").users.insert(id.to_string());
        self.bindings.insert(id.to_string(), ex);
        Ok(())
    }

    /// Evaluates policy `id` against the current base rules.
    pub fn evaluate(&mut self, id: &str, base: &Engine) -> Result<PolicyOutcome, PolicyError> {
        let policy = self
            .policies
            .get(id)
            .ok_or_else(|| PolicyError::UnknownPolicy(id.to_string()))?
            .clone();
        match &policy.body {
            PolicyBody::Waypoints(_) => {
                let wp = eval_waypoints(&policy, base)?;
                Ok(PolicyOutcome { policy: policy.id, path: wp.path, backup: None, revisits: wp.revisits })
            }
            PolicyBody::NotNodes(nodes) => {
                self.bind(id, Exclusion::Nodes(nodes.clone()), base)?;
                let fork = &self.forks[&self.bindings[id]].engine;
                let path = retrieve(fork, policy.origin, policy.target)?;
                Ok(PolicyOutcome { policy: policy.id, path, backup: None, revisits: false })
            }
            PolicyBody::Backup | PolicyBody::TwoWayMultipath | PolicyBody::RedundantPaths => {
                let primary = retrieve(base, policy.origin, policy.target)?;
                let ex = Exclusion::links_of(&primary);
                let backup = if ex.is_empty() {
                    primary.clone()
                } else {
                    self.bind(id, ex, base)?;
                    let fork = &self.forks[&self.bindings[id]].engine;
                    retrieve(fork, policy.origin, policy.target).map_err(|_| {
                        PolicyError::NoBackup { src: policy.origin, dst: policy.target }
                    })?
                };
                Ok(PolicyOutcome { policy: policy.id, path: primary, backup: Some(backup), revisits: false })
            }
        }
    }

    /// Feeds an epoch's changes to every fork, minus those touching its
    /// exclusions. Forks update in parallel.
    pub fn on_epoch(&mut self, changes: &[TopologyChange]) -> Result<(), PolicyError> {
        let forks: Vec<(&Exclusion, &mut Fork)> = self.forks.iter_mut().collect();
        forks
            .into_par_iter()
            .map(|(ex, fork)| {
                let kept: Vec<TopologyChange> =
                    changes.iter().filter(|c| !ex.suppresses(c)).cloned().collect();
                fork.engine.step_epoch(&kept).map(|_| ())
            })
            .collect::<Result<Vec<()>, RoutingError>>()?;
        Ok(())
    }
}
