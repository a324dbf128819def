//! QoS routing strategies: a link cost, a path cost and a path selection
//! order over candidate rules of one `(src, dst)` group.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph_model::{LinkCost, LinkProperties, NodeId};

/// Weight assigned to a link with no free bandwidth under `sd_free_bw`.
pub const SATURATED_LINK_WEIGHT: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown strategy {0:?} (expected hop_count, sd_free_bw, sd_utilization or shortest_widest)")]
pub struct UnknownStrategy(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Unit link cost, additive path cost.
    HopCount,
    /// Link cost is the inverse of free bandwidth, additive path cost.
    SdFreeBw,
    /// Link cost is the utilization, additive path cost.
    SdUtilization,
    /// Link cost is free bandwidth, path cost is the bottleneck; widest
    /// first, then fewest hops.
    ShortestWidest,
}

/// A routing strategy. Immutable and cheap to copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Strategy {
    kind: StrategyKind,
}

/// The fields of a rule that selection looks at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub next: NodeId,
    pub p_cost: f64,
    pub p_length: u32,
}

impl Strategy {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::HopCount,
        StrategyKind::SdFreeBw,
        StrategyKind::SdUtilization,
        StrategyKind::ShortestWidest,
    ];

    pub fn new(kind: StrategyKind) -> Self {
        Strategy { kind }
    }

    /// Looks up one of the built-in strategies. Accepts both the library
    /// names (`sd_free_bw`) and the CLI spellings (`sd-freebw`).
    pub fn builtin(name: &str) -> Result<Self, UnknownStrategy> {
        let kind = match name {
            "hop_count" | "hopcount" | "hop-count" => StrategyKind::HopCount,
            "sd_free_bw" | "sd-freebw" | "sd-free-bw" => StrategyKind::SdFreeBw,
            "sd_utilization" | "sd-util" | "sd-utilization" => StrategyKind::SdUtilization,
            "shortest_widest" | "widest" | "shortest-widest" => StrategyKind::ShortestWidest,
            other => return Err(UnknownStrategy(other.to_string())),
        };
        Ok(Strategy { kind })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            StrategyKind::HopCount => "hop_count",
            StrategyKind::SdFreeBw => "sd_free_bw",
            StrategyKind::SdUtilization => "sd_utilization",
            StrategyKind::ShortestWidest => "shortest_widest",
        }
    }

    /// Whether path cost accumulates by addition (all but shortest-widest).
    pub fn is_additive(&self) -> bool {
        self.kind != StrategyKind::ShortestWidest
    }

    /// Whether selection prefers larger path costs.
    pub fn maximizes(&self) -> bool {
        self.kind == StrategyKind::ShortestWidest
    }

    pub fn link_cost(&self, props: &LinkProperties) -> f64 {
        match self.kind {
            StrategyKind::HopCount => 1.0,
            StrategyKind::SdFreeBw => {
                let free = props.free_bandwidth();
                if free > 0.0 {
                    1.0 / free
                } else {
                    SATURATED_LINK_WEIGHT
                }
            }
            StrategyKind::SdUtilization => props.utilization,
            StrategyKind::ShortestWidest => props.free_bandwidth().max(0.0),
        }
    }

    /// Cost of extending a path of cost `p_cost` by a link of weight `w`.
    pub fn path_cost(&self, w: f64, p_cost: f64) -> f64 {
        match self.kind {
            StrategyKind::HopCount => 1.0 + p_cost,
            StrategyKind::SdFreeBw | StrategyKind::SdUtilization => w + p_cost,
            StrategyKind::ShortestWidest => w.min(p_cost),
        }
    }

    /// Cost of the concatenation of two paths.
    pub fn concat_cost(&self, first: f64, second: f64) -> f64 {
        if self.is_additive() {
            first + second
        } else {
            first.min(second)
        }
    }

    /// Path cost of the zero-hop self path.
    pub fn tautology_cost(&self) -> f64 {
        if self.is_additive() {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Additive strategies need strictly positive finite weights; widths
    /// must be finite and non-negative.
    pub fn admits_weight(&self, w: f64) -> bool {
        if self.is_additive() {
            w.is_finite() && w > 0.0
        } else {
            w.is_finite() && w >= 0.0
        }
    }

    /// Total order over candidates of one group; `Less` means preferred.
    ///
    /// Primary key is the path cost (min, or max for shortest-widest),
    /// then fewer hops, then the smaller next-hop id.
    pub fn compare(&self, a: &Candidate, b: &Candidate) -> Ordering {
        let primary = if self.maximizes() {
            b.p_cost.total_cmp(&a.p_cost)
        } else {
            a.p_cost.total_cmp(&b.p_cost)
        };
        primary
            .then(a.p_length.cmp(&b.p_length))
            .then(a.next.cmp(&b.next))
    }

    /// Whether a label with `(cost, length)` is at least as good as another
    /// on both path cost and hop count.
    pub fn dominates(&self, cost: f64, length: u32, other_cost: f64, other_length: u32) -> bool {
        if self.is_additive() {
            // Additive extension is monotone in the lexicographic order.
            match cost.total_cmp(&other_cost) {
                Ordering::Less => true,
                Ordering::Equal => length <= other_length,
                Ordering::Greater => false,
            }
        } else {
            cost >= other_cost && length <= other_length
        }
    }

    /// Cost as a key that sorts ascending in preference order.
    pub(crate) fn rank_primary(&self, p_cost: f64) -> f64 {
        if self.maximizes() {
            -p_cost
        } else {
            p_cost
        }
    }

    pub(crate) fn cost_from_rank(&self, primary: f64) -> f64 {
        if self.maximizes() {
            -primary
        } else {
            primary
        }
    }
}

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::builtin(s)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LinkCost for Strategy {
    fn weight(&self, props: &LinkProperties) -> f64 {
        self.link_cost(props)
    }

    fn admits(&self, w: f64) -> bool {
        self.admits_weight(w)
    }
}
