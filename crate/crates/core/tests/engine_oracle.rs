use deltapath_core::graph_model::{
    GraphStore, LinkProperties, NodeId, NodeLabel, NodeRecord, TopologyChange,
};
use deltapath_core::oracle;
use deltapath_core::routing_core::Engine;
use deltapath_core::strategy::{Strategy, StrategyKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, nodes: u32, extra: usize, strategy: &Strategy) -> GraphStore {
    let mut g = GraphStore::new();
    for i in 0..nodes {
        g.add_node(NodeRecord::new(NodeId(i), NodeLabel::Switch)).unwrap();
    }
    // Random spanning tree, then extra links.
    for i in 1..nodes {
        let j = rng.gen_range(0..i);
        add(&mut g, rng, i, j, strategy);
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..nodes);
        let b = rng.gen_range(0..nodes);
        if a != b {
            add(&mut g, rng, a, b, strategy);
        }
    }
    g
}

fn props(rng: &mut ChaCha8Rng) -> LinkProperties {
    LinkProperties::new(rng.gen_range(1..=10) as f64, rng.gen_range(1..=100) as f64, 0.0).unwrap()
}

fn add(g: &mut GraphStore, rng: &mut ChaCha8Rng, a: u32, b: u32, strategy: &Strategy) {
    let props = props(rng);
    g.apply_change(&TopologyChange::AddLink { a: NodeId(a), b: NodeId(b), props }, strategy)
        .unwrap();
}

fn random_change(rng: &mut ChaCha8Rng, g: &GraphStore, next_id: &mut u32) -> TopologyChange {
    let links = g.undirected_links();
    let nodes: Vec<NodeId> = g.node_ids().collect();
    match rng.gen_range(0..10) {
        0..=2 if !links.is_empty() => {
            let (a, b, w, _) = *links.choose(rng).unwrap();
            TopologyChange::RemoveLink { a, b, weight: Some(w) }
        }
        3..=5 if !links.is_empty() => {
            let (a, b, _, _) = *links.choose(rng).unwrap();
            if g.links_between(a, b).len() > 1 {
                return TopologyChange::RemoveLink { a, b, weight: None }.clone_if_unambiguous(g);
            }
            TopologyChange::UpdateWeight { a, b, utilization: rng.gen_range(1..=100) as f64 }
        }
        6 if nodes.len() > 3 => TopologyChange::RemoveNode { id: *nodes.choose(rng).unwrap() },
        7 => {
            *next_id += 1;
            TopologyChange::AddNode { id: NodeId(*next_id), label: NodeLabel::Switch }
        }
        _ => {
            let a = *nodes.choose(rng).unwrap();
            let b = *nodes.choose(rng).unwrap();
            if a == b {
                return TopologyChange::AddNode {
                    id: NodeId({
                        *next_id += 1;
                        *next_id
                    }),
                    label: NodeLabel::Switch,
                };
            }
            TopologyChange::AddLink { a, b, props: props(rng) }
        }
    }
}

trait Unambiguous {
    fn clone_if_unambiguous(self, g: &GraphStore) -> TopologyChange;
}

impl Unambiguous for TopologyChange {
    fn clone_if_unambiguous(self, g: &GraphStore) -> TopologyChange {
        match self {
            TopologyChange::RemoveLink { a, b, .. } => {
                let (w, _) = g.links_between(a, b)[0];
                TopologyChange::RemoveLink { a, b, weight: Some(w) }
            }
            other => other,
        }
    }
}

fn run(kind: StrategyKind, seeds: u64, max_nodes: u32, epochs: usize, workers: usize) {
    let strategy = Strategy::new(kind);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = rng.gen_range(3..=max_nodes);
        let g = random_graph(&mut rng, nodes, nodes as usize, &strategy);
        let mut engine = Engine::initialize(g, strategy, workers).unwrap();
        let mut next_id = 1000;
        for epoch in 0..epochs {
            let size = rng.gen_range(1..=3);
            let mut staged = engine.graph().clone();
            let mut batch = Vec::new();
            for _ in 0..size {
                let c = random_change(&mut rng, &staged, &mut next_id);
                if staged.apply_change(&c, &strategy).is_ok() {
                    batch.push(c);
                }
            }
            let before = oracle::solve(engine.graph(), &strategy).unwrap();
            let out = engine.step_epoch(&batch).unwrap();
            let after = oracle::solve(engine.graph(), &strategy).unwrap();
            if let Err(d) = oracle::check_established(&engine.snapshot(), &after, true) {
                panic!("seed {seed} epoch {epoch} {kind:?} batch {batch:?}: {d}");
            }
            assert_eq!(out.changed_pairs(), oracle::diff(&before, &after), "seed {seed} epoch {epoch}");
            engine.check_invariants().unwrap_or_else(|e| panic!("seed {seed} epoch {epoch}: {e}"));
        }
    }
}

#[test]
fn additive_strategies_match_dijkstra() {
    for kind in [StrategyKind::SdUtilization, StrategyKind::HopCount, StrategyKind::SdFreeBw] {
        run(kind, 20, 25, 30, 1);
    }
}

#[test]
fn widest_matches_enumeration() {
    run(StrategyKind::ShortestWidest, 30, 10, 20, 1);
}

#[test]
fn sharded_engine_matches_oracle() {
    run(StrategyKind::SdUtilization, 5, 25, 20, 3);
    run(StrategyKind::ShortestWidest, 5, 10, 20, 2);
}
