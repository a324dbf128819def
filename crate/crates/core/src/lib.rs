//! Incremental all-pairs QoS routing.
//!
//! [`Engine`] keeps a forwarding rule for every reachable ordered switch
//! pair and updates them per epoch of topology changes. Paths are read off
//! the rules with [`retrieve`]; waypoint, NOT and backup policies are
//! evaluated by [`PolicyEngine`]. [`oracle`] holds the from-scratch solvers
//! used to check results, [`workloads`] the topology and event generators.

pub mod formats;
pub mod graph_model;
pub mod oracle;
pub mod path_retrieval;
pub mod policy_engine;
pub mod routing_core;
pub mod strategy;
pub mod workloads;

pub use formats::{parse_events, write_events, EpochBlock, EventLine, ParseError, Topology};
pub use graph_model::{
    EdgeRecord, GraphError, GraphStore, LinkProperties, NodeId, NodeLabel, NodeRecord,
    TopologyChange,
};
pub use path_retrieval::{path_links, retrieve, Path, PathRequest, RetrievalError, RuleView};
pub use policy_engine::{Policy, PolicyBody, PolicyEngine, PolicyError, PolicyOutcome};
pub use routing_core::{Engine, EpochOutput, ForwardingRule, RoutingError};
pub use strategy::{Strategy, StrategyKind};
