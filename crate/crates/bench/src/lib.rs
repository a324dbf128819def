//! Shared fixtures for the benchmarks.

use deltapath_core::formats::EpochBlock;
use deltapath_core::workloads::{self, Scenario, ScenarioKind, WeightPlan};
use deltapath_core::{Engine, NodeId, PathRequest, Strategy, StrategyKind, Topology};

pub fn fattree(k: usize, plan: WeightPlan) -> Topology {
    let mut t = workloads::gen_fattree(k).expect("even arity");
    plan.apply(&mut t);
    t
}

pub fn engine(topo: &Topology, kind: StrategyKind, workers: usize) -> Engine {
    let s = Strategy::new(kind);
    Engine::initialize(topo.to_graph(&s).expect("valid topology"), s, workers).expect("fixpoint")
}

pub fn scenario(topo: &Topology, kind: ScenarioKind, trials: usize, batch_size: usize) -> Vec<EpochBlock> {
    let sc = Scenario { kind, trials, batch_size, seed: 42 };
    workloads::gen_scenario(topo, &Strategy::new(StrategyKind::SdUtilization), &sc).expect("scenario")
}

pub fn requests(topo: &Topology, n: usize) -> Vec<(NodeId, NodeId)> {
    scenario(topo, ScenarioKind::PathRequestBatches, 1, n)[0]
        .requests()
        .into_iter()
        .map(|PathRequest { src, dst, .. }| (src, dst))
        .collect()
}
