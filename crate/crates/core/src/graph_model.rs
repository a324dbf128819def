//! Delta-encoded property graph of the network.
//!
//! Every undirected link is stored as two directed edge records with the
//! same weight. Edge identity for aggregation is `(src, dst, weight)`; link
//! properties ride along but do not participate in identity. Multiplicities
//! are summed and entries that reach zero are dropped immediately.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use thiserror::Error;

/// Unique identifier of a network node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

impl From<u32> for NodeId {
    fn from(id: u32) -> Self {
        NodeId(id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeLabel {
    Switch,
    Server,
    Firewall,
    Host,
}

impl NodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Switch => "switch",
            NodeLabel::Server => "server",
            NodeLabel::Firewall => "firewall",
            NodeLabel::Host => "host",
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeLabel {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switch" => Ok(NodeLabel::Switch),
            "server" => Ok(NodeLabel::Server),
            "firewall" => Ok(NodeLabel::Firewall),
            "host" => Ok(NodeLabel::Host),
            other => Err(GraphError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub label: NodeLabel,
    pub properties: BTreeMap<String, String>,
}

impl NodeRecord {
    pub fn new(id: NodeId, label: NodeLabel) -> Self {
        NodeRecord {
            id,
            label,
            properties: BTreeMap::new(),
        }
    }
}

/// Physical attributes of a link. Utilization is a percentage of capacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkProperties {
    pub capacity: f64,
    pub utilization: f64,
    pub delay: f64,
}

impl LinkProperties {
    pub fn new(capacity: f64, utilization: f64, delay: f64) -> Result<Self, GraphError> {
        let props = LinkProperties {
            capacity,
            utilization,
            delay,
        };
        props.validate()?;
        Ok(props)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let ok = self.capacity.is_finite()
            && self.capacity > 0.0
            && (0.0..=100.0).contains(&self.utilization)
            && self.delay.is_finite()
            && self.delay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GraphError::InvalidProperties(*self))
        }
    }

    /// Bandwidth not currently in use: `capacity * (1 - utilization/100)`.
    pub fn free_bandwidth(&self) -> f64 {
        self.capacity * (1.0 - self.utilization / 100.0)
    }

    pub fn with_utilization(self, utilization: f64) -> Self {
        LinkProperties {
            utilization,
            ..self
        }
    }
}

impl Default for LinkProperties {
    fn default() -> Self {
        LinkProperties {
            capacity: 10.0,
            utilization: 1.0,
            delay: 0.0,
        }
    }
}

/// A directed weighted edge carrying a signed multiplicity change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub w: f64,
    pub props: LinkProperties,
    pub delta: i64,
}

impl EdgeRecord {
    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.src, self.dst, self.w)
    }
}

/// Identity of an edge for delta aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub w: OrderedFloat<f64>,
}

impl EdgeKey {
    pub fn new(src: NodeId, dst: NodeId, w: f64) -> Self {
        EdgeKey {
            src,
            dst,
            w: OrderedFloat(w),
        }
    }

    pub fn reversed(&self) -> Self {
        EdgeKey {
            src: self.dst,
            dst: self.src,
            w: self.w,
        }
    }

    fn lower(src: NodeId) -> Self {
        EdgeKey {
            src,
            dst: NodeId(0),
            w: OrderedFloat(f64::NEG_INFINITY),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeEntry {
    pub multiplicity: i64,
    pub props: LinkProperties,
}

/// Kinds of topology change accepted by the store.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologyChange {
    AddLink {
        a: NodeId,
        b: NodeId,
        props: LinkProperties,
    },
    /// `weight: None` resolves to the unique stored weight of the pair.
    RemoveLink {
        a: NodeId,
        b: NodeId,
        weight: Option<f64>,
    },
    AddNode {
        id: NodeId,
        label: NodeLabel,
    },
    RemoveNode {
        id: NodeId,
    },
    /// Replaces the link's utilization; capacity and delay are kept.
    UpdateWeight {
        a: NodeId,
        b: NodeId,
        utilization: f64,
    },
}

impl TopologyChange {
    /// Nodes this change refers to.
    pub fn touches(&self) -> smallvec::SmallVec<[NodeId; 2]> {
        match *self {
            TopologyChange::AddLink { a, b, .. }
            | TopologyChange::RemoveLink { a, b, .. }
            | TopologyChange::UpdateWeight { a, b, .. } => smallvec::smallvec![a, b],
            TopologyChange::AddNode { id, .. } | TopologyChange::RemoveNode { id } => {
                smallvec::smallvec![id]
            }
        }
    }

    /// The undirected endpoint pair for link changes.
    pub fn link(&self) -> Option<(NodeId, NodeId)> {
        match *self {
            TopologyChange::AddLink { a, b, .. }
            | TopologyChange::RemoveLink { a, b, .. }
            | TopologyChange::UpdateWeight { a, b, .. } => Some(undirected(a, b)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyEvent {
    pub change: TopologyChange,
    pub epoch: u64,
}

/// Normalized undirected endpoint pair.
pub fn undirected(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Maps link properties to an edge weight and declares which weights are
/// admissible.
pub trait LinkCost {
    fn weight(&self, props: &LinkProperties) -> f64;

    fn admits(&self, _w: f64) -> bool {
        true
    }
}

impl<F: Fn(&LinkProperties) -> f64> LinkCost for F {
    fn weight(&self, props: &LinkProperties) -> f64 {
        self(props)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("no link between {0} and {1}")]
    UnknownLink(NodeId, NodeId),
    #[error("link {0}-{1} has several weights {2:?}; give w= explicitly")]
    AmbiguousLink(NodeId, NodeId, Vec<f64>),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("weight {w} of link {a}-{b} is outside the strategy's domain")]
    InvalidWeight { a: NodeId, b: NodeId, w: f64 },
    #[error("invalid link properties {0:?}")]
    InvalidProperties(LinkProperties),
    #[error("edge {src}->{dst} (w={w}) would reach multiplicity {result}")]
    NegativeMultiplicity {
        src: NodeId,
        dst: NodeId,
        w: f64,
        result: i64,
    },
    #[error("unknown node label {0:?}")]
    UnknownLabel(String),
}

/// Network graph as a multiset of directed edges plus a node table.
#[derive(Clone, Debug, Default)]
pub struct GraphStore {
    nodes: BTreeMap<NodeId, NodeRecord>,
    edges: BTreeMap<EdgeKey, EdgeEntry>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> + '_ {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Number of directed edge entries (parallel links counted once).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, &EdgeEntry)> + '_ {
        self.edges.iter()
    }

    pub fn multiplicity(&self, src: NodeId, dst: NodeId, w: f64) -> i64 {
        self.edges
            .get(&EdgeKey::new(src, dst, w))
            .map_or(0, |e| e.multiplicity)
    }

    /// Outgoing edges of `src` as `(dst, w, entry)`.
    pub fn out_edges(&self, src: NodeId) -> impl Iterator<Item = (NodeId, f64, &EdgeEntry)> + '_ {
        let upper = NodeId(src.0.wrapping_add(1));
        let range = if upper.0 == 0 {
            self.edges.range(EdgeKey::lower(src)..)
        } else {
            self.edges.range(EdgeKey::lower(src)..EdgeKey::lower(upper))
        };
        range
            .take_while(move |(k, _)| k.src == src)
            .map(|(k, e)| (k.dst, k.w.0, e))
    }

    pub fn neighbors(&self, src: NodeId) -> BTreeSet<NodeId> {
        self.out_edges(src).map(|(d, _, _)| d).collect()
    }

    /// Weights and multiplicities of all directed edges `a -> b`.
    pub fn links_between(&self, a: NodeId, b: NodeId) -> Vec<(f64, i64)> {
        self.out_edges(a)
            .filter(|(d, _, _)| *d == b)
            .map(|(_, w, e)| (w, e.multiplicity))
            .collect()
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.out_edges(a).any(|(d, _, _)| d == b)
    }

    /// Distinct undirected links `(a, b, w)` with `a < b`, with multiplicity.
    pub fn undirected_links(&self) -> Vec<(NodeId, NodeId, f64, i64)> {
        self.edges
            .iter()
            .filter(|(k, _)| k.src < k.dst)
            .map(|(k, e)| (k.src, k.dst, k.w.0, e.multiplicity))
            .collect()
    }

    pub fn add_node(&mut self, record: NodeRecord) -> Result<(), GraphError> {
        if self.nodes.contains_key(&record.id) {
            return Err(GraphError::DuplicateNode(record.id));
        }
        self.nodes.insert(record.id, record);
        Ok(())
    }

    /// Translates a topology change into directed edge deltas. Node changes
    /// take effect on the node table immediately; edge deltas must be passed
    /// to [`GraphStore::apply_deltas`].
    pub fn ingest(
        &mut self,
        change: &TopologyChange,
        cost: &impl LinkCost,
    ) -> Result<Vec<EdgeRecord>, GraphError> {
        match *change {
            TopologyChange::AddLink { a, b, props } => {
                self.require_link_endpoints(a, b)?;
                props.validate()?;
                let w = cost.weight(&props);
                if !cost.admits(w) {
                    return Err(GraphError::InvalidWeight { a, b, w });
                }
                Ok(link_records(a, b, w, props, 1).to_vec())
            }
            TopologyChange::RemoveLink { a, b, weight } => {
                self.require_link_endpoints(a, b)?;
                let w = self.resolve_weight(a, b, weight)?;
                let props = self.edges[&EdgeKey::new(a, b, w)].props;
                Ok(link_records(a, b, w, props, -1).to_vec())
            }
            TopologyChange::UpdateWeight { a, b, utilization } => {
                self.require_link_endpoints(a, b)?;
                let old = self.resolve_weight(a, b, None)?;
                let old_props = self.edges[&EdgeKey::new(a, b, old)].props;
                let props = old_props.with_utilization(utilization);
                props.validate()?;
                let w = cost.weight(&props);
                if !cost.admits(w) {
                    return Err(GraphError::InvalidWeight { a, b, w });
                }
                let mut out = link_records(a, b, old, old_props, -1).to_vec();
                out.extend_from_slice(&link_records(a, b, w, props, 1));
                Ok(out)
            }
            TopologyChange::AddNode { id, label } => {
                self.add_node(NodeRecord::new(id, label))?;
                Ok(Vec::new())
            }
            TopologyChange::RemoveNode { id } => {
                if !self.nodes.contains_key(&id) {
                    return Err(GraphError::UnknownNode(id));
                }
                let mut out = Vec::new();
                let incident: Vec<_> = self
                    .out_edges(id)
                    .map(|(dst, w, e)| (dst, w, *e))
                    .collect();
                for (dst, w, entry) in incident {
                    for _ in 0..entry.multiplicity {
                        out.extend_from_slice(&link_records(id, dst, w, entry.props, -1));
                    }
                }
                self.nodes.remove(&id);
                Ok(out)
            }
        }
    }

    /// Folds edge deltas into the store and returns the net non-zero change
    /// per key. Fails without modifying the store if any key would go
    /// negative.
    pub fn apply_deltas(&mut self, deltas: &[EdgeRecord]) -> Result<Vec<EdgeRecord>, GraphError> {
        let mut net: BTreeMap<EdgeKey, (i64, LinkProperties)> = BTreeMap::new();
        for rec in deltas {
            let slot = net.entry(rec.key()).or_insert((0, rec.props));
            slot.0 += rec.delta;
            if rec.delta > 0 {
                slot.1 = rec.props;
            }
        }
        net.retain(|_, (d, _)| *d != 0);
        for (key, (d, _)) in &net {
            let result = self.edges.get(key).map_or(0, |e| e.multiplicity) + d;
            if result < 0 {
                return Err(GraphError::NegativeMultiplicity {
                    src: key.src,
                    dst: key.dst,
                    w: key.w.0,
                    result,
                });
            }
        }
        let mut changes = Vec::with_capacity(net.len());
        for (key, (d, props)) in net {
            let entry = self.edges.entry(key).or_insert(EdgeEntry {
                multiplicity: 0,
                props,
            });
            entry.multiplicity += d;
            if d > 0 {
                entry.props = props;
            }
            let stored_props = entry.props;
            if entry.multiplicity == 0 {
                self.edges.remove(&key);
            }
            changes.push(EdgeRecord {
                src: key.src,
                dst: key.dst,
                w: key.w.0,
                props: stored_props,
                delta: d,
            });
        }
        Ok(changes)
    }

    /// Ingests a change and applies its deltas in one step.
    pub fn apply_change(
        &mut self,
        change: &TopologyChange,
        cost: &impl LinkCost,
    ) -> Result<Vec<EdgeRecord>, GraphError> {
        let records = self.ingest(change, cost)?;
        self.apply_deltas(&records)
    }

    /// Independent copy of the store.
    pub fn fork(&self) -> GraphStore {
        self.clone()
    }

    /// Checks the stored-state invariants: no zero entries, symmetric
    /// multiplicities, no dangling endpoints.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (key, entry) in &self.edges {
            if entry.multiplicity <= 0 {
                return Err(format!("edge {key:?} has multiplicity {}", entry.multiplicity));
            }
            match self.edges.get(&key.reversed()) {
                Some(rev) if rev.multiplicity == entry.multiplicity => {}
                other => {
                    return Err(format!(
                        "edge {key:?} x{} has reverse {:?}",
                        entry.multiplicity,
                        other.map(|e| e.multiplicity)
                    ))
                }
            }
            if !self.nodes.contains_key(&key.src) || !self.nodes.contains_key(&key.dst) {
                return Err(format!("edge {key:?} has a dangling endpoint"));
            }
        }
        Ok(())
    }

    fn require_link_endpoints(&self, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        for n in [a, b] {
            if !self.nodes.contains_key(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        Ok(())
    }

    fn resolve_weight(&self, a: NodeId, b: NodeId, weight: Option<f64>) -> Result<f64, GraphError> {
        match weight {
            Some(w) => {
                if self.multiplicity(a, b, w) > 0 {
                    Ok(w)
                } else {
                    Err(GraphError::UnknownLink(a, b))
                }
            }
            None => {
                let ws = self.links_between(a, b);
                match ws.as_slice() {
                    [] => Err(GraphError::UnknownLink(a, b)),
                    [(w, _)] => Ok(*w),
                    many => Err(GraphError::AmbiguousLink(
                        a,
                        b,
                        many.iter().map(|(w, _)| *w).collect(),
                    )),
                }
            }
        }
    }
}

impl PartialEq for GraphStore {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

fn link_records(a: NodeId, b: NodeId, w: f64, props: LinkProperties, delta: i64) -> [EdgeRecord; 2] {
    [
        EdgeRecord {
            src: a,
            dst: b,
            w,
            props,
            delta,
        },
        EdgeRecord {
            src: b,
            dst: a,
            w,
            props,
            delta,
        },
    ]
}
