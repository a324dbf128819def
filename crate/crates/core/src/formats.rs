//! Line-oriented topology and event files.
//!
//! Topology:
//!
//! ```text
//! # comment
//! node 0 switch pod=0
//! link 0 1 capacity=10 utilization=35 delay=0.5
//! ```
//!
//! Events, grouped into epochs with strictly increasing numbers. A `reset`
//! line before an epoch restores the initial topology first.
//!
//! ```text
//! epoch 1
//! -link 0 1
//! weight 1 2 utilization=40
//! req 7 0 2
//! +policy fw 0 : !3 : 2
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph_model::{
    GraphError, GraphStore, LinkCost, LinkProperties, NodeId, NodeLabel, NodeRecord,
    TopologyChange,
};
use crate::path_retrieval::PathRequest;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub props: LinkProperties,
}

/// A parsed topology, independent of any strategy's link weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    pub nodes: Vec<NodeRecord>,
    pub links: Vec<LinkSpec>,
}

impl Topology {
    /// Builds the edge store with weights from `cost`.
    pub fn to_graph(&self, cost: &impl LinkCost) -> Result<GraphStore, GraphError> {
        let mut g = GraphStore::new();
        for n in &self.nodes {
            g.add_node(n.clone())?;
        }
        for l in &self.links {
            g.apply_change(&TopologyChange::AddLink { a: l.a, b: l.b, props: l.props }, cost)?;
        }
        Ok(g)
    }

    pub fn parse(text: &str) -> Result<Topology, ParseError> {
        let mut topo = Topology::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let toks = tokens(raw);
            match toks.as_slice() {
                [] => {}
                ["node", id, label, rest @ ..] => {
                    let mut record = NodeRecord::new(node_id(line, id)?, node_label(line, label)?);
                    record.properties = key_values(line, rest)?;
                    topo.nodes.push(record);
                }
                ["link", a, b, rest @ ..] => {
                    let kv = key_values(line, rest)?;
                    let props = link_props(line, &kv)?;
                    topo.links.push(LinkSpec { a: node_id(line, a)?, b: node_id(line, b)?, props });
                }
                _ => return Err(err(line, format!("unrecognized topology line {:?}", raw.trim()))),
            }
        }
        Ok(topo)
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = write!(out, "node {} {}", n.id, n.label);
            for (k, v) in &n.properties {
                let _ = write!(out, " {k}={v}");
            }
            out.push('\n');
        }
        for l in &self.links {
            let _ = writeln!(out, "link {} {} {}", l.a, l.b, props_fields(&l.props));
        }
        out
    }
}

fn props_fields(p: &LinkProperties) -> String {
    format!("capacity={} utilization={} delay={}", p.capacity, p.utilization, p.delay)
}

/// One line of an epoch block.
#[derive(Clone, Debug, PartialEq)]
pub enum EventLine {
    Change(TopologyChange),
    Request(PathRequest),
    AddPolicy { id: String, text: String },
    RemovePolicy { id: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochBlock {
    pub epoch: u64,
    /// Restore the initial topology before applying this epoch.
    pub reset: bool,
    pub lines: Vec<EventLine>,
}

impl EpochBlock {
    pub fn changes(&self) -> Vec<TopologyChange> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                EventLine::Change(c) => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn requests(&self) -> Vec<PathRequest> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                EventLine::Request(r) => Some(*r),
                _ => None,
            })
            .collect()
    }
}

pub fn parse_events(text: &str) -> Result<Vec<EpochBlock>, ParseError> {
    let mut blocks: Vec<EpochBlock> = Vec::new();
    let mut pending_reset = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks = tokens(raw);
        if toks.is_empty() {
            continue;
        }
        if toks == ["reset"] {
            pending_reset = true;
            continue;
        }
        if let ["epoch", n] = toks.as_slice() {
            let epoch: u64 = n.parse().map_err(|_| err(line, format!("bad epoch number {n:?}")))?;
            if let Some(prev) = blocks.last() {
                if epoch <= prev.epoch {
                    return Err(err(line, format!("epoch {epoch} after epoch {}", prev.epoch)));
                }
            }
            blocks.push(EpochBlock { epoch, reset: pending_reset, lines: Vec::new() });
            pending_reset = false;
            continue;
        }
        let Some(block) = blocks.last_mut() else {
            return Err(err(line, "event before the first `epoch` line"));
        };
        if pending_reset {
            return Err(err(line, "`reset` must precede an `epoch` line"));
        }
        block.lines.push(event_line(line, raw, &toks)?);
    }
    if pending_reset {
        return Err(err(text.lines().count(), "trailing `reset` without an epoch"));
    }
    Ok(blocks)
}

fn event_line(line: usize, raw: &str, toks: &[&str]) -> Result<EventLine, ParseError> {
    let change = |c| Ok(EventLine::Change(c));
    match toks {
        ["+link", a, b, rest @ ..] => {
            let kv = key_values(line, rest)?;
            change(TopologyChange::AddLink {
                a: node_id(line, a)?,
                b: node_id(line, b)?,
                props: link_props(line, &kv)?,
            })
        }
        ["-link", a, b, rest @ ..] => {
            let kv = key_values(line, rest)?;
            let weight = match kv.get("w") {
                Some(w) => Some(number(line, "w", w)?),
                None => None,
            };
            if let Some(k) = kv.keys().find(|k| *k != "w") {
                return Err(err(line, format!("unexpected field {k:?}")));
            }
            change(TopologyChange::RemoveLink { a: node_id(line, a)?, b: node_id(line, b)?, weight })
        }
        ["+node", id, label] => change(TopologyChange::AddNode {
            id: node_id(line, id)?,
            label: node_label(line, label)?,
        }),
        ["-node", id] => change(TopologyChange::RemoveNode { id: node_id(line, id)? }),
        ["weight", a, b, field] => {
            let kv = key_values(line, &[field])?;
            let u = kv.get("utilization").ok_or_else(|| err(line, "expected utilization=<value>"))?;
            change(TopologyChange::UpdateWeight {
                a: node_id(line, a)?,
                b: node_id(line, b)?,
                utilization: number(line, "utilization", u)?,
            })
        }
        ["req", flow, s, t] => Ok(EventLine::Request(PathRequest {
            flow_id: flow.parse().map_err(|_| err(line, format!("bad flow id {flow:?}")))?,
            src: node_id(line, s)?,
            dst: node_id(line, t)?,
        })),
        ["+policy", id, _, ..] => {
            let body = raw.trim_start();
            let body = body["+policy".len()..].trim_start();
            let body = body[id.len()..].trim();
            Ok(EventLine::AddPolicy { id: id.to_string(), text: body.to_string() })
        }
        ["-policy", id] => Ok(EventLine::RemovePolicy { id: id.to_string() }),
        _ => Err(err(line, format!("unrecognized event {:?}", raw.trim()))),
    }
}

pub fn write_events(blocks: &[EpochBlock]) -> String {
    let mut out = String::new();
    for b in blocks {
        if b.reset {
            out.push_str("reset\n");
        }
        let _ = writeln!(out, "epoch {}", b.epoch);
        for l in &b.lines {
            out.push_str(&event_text(l));
            out.push('\n');
        }
    }
    out
}

pub fn event_text(line: &EventLine) -> String {
    match line {
        EventLine::Change(c) => match c {
            TopologyChange::AddLink { a, b, props } => format!("+link {a} {b} {}", props_fields(props)),
            TopologyChange::RemoveLink { a, b, weight: None } => format!("-link {a} {b}"),
            TopologyChange::RemoveLink { a, b, weight: Some(w) } => format!("-link {a} {b} w={w}"),
            TopologyChange::AddNode { id, label } => format!("+node {id} {label}"),
            TopologyChange::RemoveNode { id } => format!("-node {id}"),
            TopologyChange::UpdateWeight { a, b, utilization } => {
                format!("weight {a} {b} utilization={utilization}")
            }
        },
        EventLine::Request(r) => format!("req {} {} {}", r.flow_id, r.src, r.dst),
        EventLine::AddPolicy { id, text } => format!("+policy {id} {text}"),
        EventLine::RemovePolicy { id } => format!("-policy {id}"),
    }
}

fn tokens(raw: &str) -> Vec<&str> {
    let content = raw.split('#').next().unwrap_or("");
    content.split_whitespace().collect()
}

fn node_id(line: usize, tok: &str) -> Result<NodeId, ParseError> {
    tok.parse().map_err(|_| err(line, format!("bad node id {tok:?}")))
}

fn node_label(line: usize, tok: &str) -> Result<NodeLabel, ParseError> {
    tok.parse().map_err(|e: GraphError| err(line, e.to_string()))
}

fn number(line: usize, key: &str, v: &str) -> Result<f64, ParseError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(line, format!("bad number for {key}: {v:?}")))
}

fn key_values(line: usize, toks: &[&str]) -> Result<BTreeMap<String, String>, ParseError> {
    let mut out = BTreeMap::new();
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .filter(|(k, v)| !k.is_empty() && !v.is_empty())
            .ok_or_else(|| err(line, format!("expected key=value, got {t:?}")))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(line, format!("duplicate field {k:?}")));
        }
    }
    Ok(out)
}

fn link_props(line: usize, kv: &BTreeMap<String, String>) -> Result<LinkProperties, ParseError> {
    if let Some(k) = kv.keys().find(|k| !matches!(k.as_str(), "capacity" | "utilization" | "delay")) {
        return Err(err(line, format!("unexpected link field {k:?}")));
    }
    let field = |k: &str| -> Result<f64, ParseError> {
        let v = kv.get(k).ok_or_else(|| err(line, format!("missing {k}=")))?;
        number(line, k, v)
    };
    let delay = match kv.get("delay") {
        Some(v) => number(line, "delay", v)?,
        None => 0.0,
    };
    LinkProperties::new(field("capacity")?, field("utilization")?, delay)
        .map_err(|e| err(line, e.to_string()))
}
