//! Acceptance gate. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use deltapath_core::formats::{EpochBlock, Topology};
use deltapath_core::graph_model::{EdgeKey, GraphStore, NodeId, TopologyChange};
use deltapath_core::oracle::{self, OracleResult};
use deltapath_core::path_retrieval::{fold_cost, path_links, retrieve};
use deltapath_core::policy_engine::{Policy, PolicyBody, PolicyEngine};
use deltapath_core::routing_core::{Engine, ForwardingRule};
use deltapath_core::strategy::{Strategy, StrategyKind};
use deltapath_core::workloads::{self, Scenario, ScenarioKind, WeightPlan};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Engines checked for leftover state after each criterion.
#[derive(Default)]
struct Hygiene {
    engines: usize,
    failures: Vec<String>,
}

impl Hygiene {
    fn check(&mut self, label: &str, engine: &Engine) {
        self.engines += 1;
        if let Err(e) = engine.check_invariants() {
            self.failures.push(format!("{label}: {e}"));
        }
    }
}

fn strategy(kind: StrategyKind) -> Strategy {
    Strategy::new(kind)
}

fn median(xs: &mut [Duration]) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn fattree(k: usize, plan: WeightPlan) -> Topology {
    let mut t = workloads::gen_fattree(k).expect("even arity");
    plan.apply(&mut t);
    t
}

fn engine(topo: &Topology, s: Strategy, workers: usize) -> Engine {
    Engine::initialize(topo.to_graph(&s).expect("valid topology"), s, workers).expect("fixpoint")
}

fn random_fixture(index: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index);
    let n = rng.gen_range(10..=100);
    let avg = rng.gen_range(2.0..=6.0);
    let mut t = workloads::gen_random_graph(n, avg, 6, index);
    WeightPlan::uniform(index).apply(&mut t);
    t
}

/// 200 events split into epochs of one to three changes.
fn random_epochs(topo: &Topology, seed: u64) -> Vec<EpochBlock> {
    let flat = workloads::gen_mixed_events(topo, 200, 1, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    let mut it = flat.into_iter().flat_map(|b| b.lines).peekable();
    while it.peek().is_some() {
        let size = rng.gen_range(1..=3);
        let lines: Vec<_> = it.by_ref().take(size).collect();
        out.push(EpochBlock { epoch: out.len() as u64 + 1, reset: false, lines });
    }
    out
}

fn divergence(snapshot: &BTreeMap<(NodeId, NodeId), ForwardingRule>, expected: &OracleResult) -> Option<String> {
    oracle::check_established(snapshot, expected, true).err().map(|d| d.to_string())
}

/// Criteria 1 and 2 share the random fixture.
fn criteria_1_2(h: &mut Hygiene) -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut epochs = 0;
    let mut events = 0;
    let mut prefixes = 0;
    let mut engine_time = Duration::ZERO;
    let mut oracle_time = Duration::ZERO;
    let mut reinit_time = Duration::ZERO;
    let mut first_mismatch: Option<String> = None;
    let mut first_reinit: Option<String> = None;
    for g in 0..50u64 {
        // Integer utilization weights on even graphs, reals on odd ones.
        let s = if g % 2 == 0 {
            strategy(StrategyKind::SdUtilization)
        } else {
            strategy(StrategyKind::SdFreeBw)
        };
        let topo = random_fixture(g);
        let mut e = engine(&topo, s, 1);
        let blocks = random_epochs(&topo, g);
        let sample: BTreeSet<usize> = (0..20).map(|i| i * blocks.len() / 20).collect();
        for (i, block) in blocks.iter().enumerate() {
            let changes = block.changes();
            events += changes.len();
            let t = Instant::now();
            e.step_epoch(&changes).expect("valid epoch");
            engine_time += t.elapsed();
            epochs += 1;
            let t = Instant::now();
            let expected = oracle::apsp_additive(e.graph(), &s).expect("oracle");
            oracle_time += t.elapsed();
            if let Some(d) = divergence(&e.snapshot(), &expected) {
                first_mismatch.get_or_insert(format!("graph {g} epoch {}: {d}", block.epoch));
            }
            if sample.contains(&i) {
                let t = Instant::now();
                prefixes += 1;
                let fresh = Engine::initialize(e.graph().clone(), s, 1).expect("fixpoint");
                if fresh.snapshot() != e.snapshot() {
                    first_reinit.get_or_insert(format!("graph {g} after epoch {}", block.epoch));
                }
                reinit_time += t.elapsed();
            }
        }
        h.check(&format!("random graph {g}"), &e);
    }
    // Re-initialization belongs to criterion 2.
    let elapsed = start.elapsed() - reinit_time;
    let c1 = match first_mismatch {
        Some(m) => Err(m),
        None if elapsed > Duration::from_secs(60) => Err(format!(
            "all {epochs} epochs matched but took {:.1} s (target < 60 s)",
            elapsed.as_secs_f64()
        )),
        None => Ok(format!(
            "50 graphs, {events} events in {epochs} epochs match the oracle ({:.1} s total, engine {:.1} s, oracle {:.1} s)",
            elapsed.as_secs_f64(),
            engine_time.as_secs_f64(),
            oracle_time.as_secs_f64()
        )),
    };
    let c2 = match first_reinit {
        Some(m) => Err(format!("incremental view differs from re-initialization at {m}")),
        None => Ok(format!(
            "{prefixes} prefixes equal a fresh initialization ({:.1} s)",
            reinit_time.as_secs_f64()
        )),
    };
    (c1, c2)
}

fn criterion_3(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::HopCount);
    let topo = fattree(8, WeightPlan::hop_count());
    let base = engine(&topo, s, 1);
    let before = oracle::apsp_additive(base.graph(), &s).map_err(|e| e.to_string())?;
    let sc = Scenario { kind: ScenarioKind::LinkFailure, trials: 100, batch_size: 1, seed: 3 };
    let blocks = workloads::gen_failure_events(&topo, &sc).map_err(|e| e.to_string())?;
    let mut touched = 0;
    for block in &blocks {
        let mut e = base.clone();
        let out = e.step_epoch(&block.changes()).map_err(|e| e.to_string())?;
        let after = oracle::apsp_additive(e.graph(), &s).map_err(|e| e.to_string())?;
        let expected = oracle::diff(&before, &after);
        let got = out.changed_pairs();
        if got != expected {
            let extra: Vec<_> = got.difference(&expected).take(3).collect();
            let missing: Vec<_> = expected.difference(&got).take(3).collect();
            return Err(format!(
                "trial {}: {} pairs emitted, {} affected; extra {extra:?} missing {missing:?}",
                block.epoch,
                got.len(),
                expected.len()
            ));
        }
        touched += got.len();
        if block.epoch == 1 {
            h.check("fat-tree k=8 link failure", &e);
        }
    }
    h.check("fat-tree k=8 base", &base);
    Ok(format!(
        "100 link failures on fat-tree k=8 emit exactly the affected pairs ({} per failure on average)",
        touched / blocks.len()
    ))
}

fn criterion_4(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::ShortestWidest);
    let mut checks = 0;
    for g in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + g);
        let n = rng.gen_range(3..=12);
        let mut topo = workloads::gen_random_graph(n, rng.gen_range(2.0..=4.0), 6, g);
        for l in &mut topo.links {
            // Widths 0.5 .. 10 in steps of 0.5, so ties are common.
            l.props.utilization = (rng.gen_range(0..20) * 5) as f64;
        }
        let mut e = engine(&topo, s, 1);
        let mut blocks = vec![EpochBlock::default()];
        blocks.extend(workloads::gen_mixed_events(&topo, 10, 2, g));
        for block in &blocks {
            e.step_epoch(&block.changes()).map_err(|e| e.to_string())?;
            let expected = oracle::widest_paths_bruteforce(e.graph(), &s).map_err(|e| e.to_string())?;
            if let Some(d) = divergence(&e.snapshot(), &expected) {
                return Err(format!("graph {g} epoch {}: {d}", block.epoch));
            }
            checks += 1;
        }
        h.check(&format!("widest graph {g}"), &e);
    }
    Ok(format!("30 graphs, {checks} states equal the brute-force enumeration"))
}

fn criterion_5(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::SdUtilization);
    let topo = fattree(16, WeightPlan::uniform(5));
    let e = engine(&topo, s, 1);
    let nodes: Vec<NodeId> = e.graph().node_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pair = || {
        let mut p = nodes.choose_multiple(&mut rng, 2);
        (*p.next().unwrap(), *p.next().unwrap())
    };
    let mut singles = Vec::with_capacity(2000);
    for _ in 0..2000 {
        let (a, b) = pair();
        let t = Instant::now();
        let p = retrieve(&e, a, b).map_err(|e| e.to_string())?;
        singles.push(t.elapsed());
        std::hint::black_box(p);
    }
    let single = median(&mut singles);
    let batch: Vec<(NodeId, NodeId)> = (0..8192).map(|_| pair()).collect();
    let t = Instant::now();
    let mut hops = 0;
    for &(a, b) in &batch {
        hops += retrieve(&e, a, b).map_err(|e| e.to_string())?.length as usize;
    }
    let whole = t.elapsed();
    std::hint::black_box(hops);
    h.check("fat-tree k=16 retrieval", &e);
    let detail = format!(
        "median single retrieval {:.4} ms (< 1 ms), batch of 8192 in {:.2} ms (< 1000 ms)",
        ms(single),
        ms(whole)
    );
    if single < Duration::from_millis(1) && whole < Duration::from_secs(1) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn failure_median(k: usize, trials: usize, h: &mut Hygiene) -> Result<(Duration, Duration), String> {
    let s = strategy(StrategyKind::HopCount);
    let topo = fattree(k, WeightPlan::hop_count());
    let base = engine(&topo, s, 1);
    let sc = Scenario { kind: ScenarioKind::LinkFailure, trials, batch_size: 1, seed: 6 };
    let blocks = workloads::gen_failure_events(&topo, &sc).map_err(|e| e.to_string())?;
    let mut times = Vec::with_capacity(trials);
    let mut last = None;
    for block in &blocks {
        let mut e = base.clone();
        let changes = block.changes();
        let t = Instant::now();
        e.step_epoch(&changes).map_err(|e| e.to_string())?;
        times.push(t.elapsed());
        last = Some(e);
    }
    h.check(&format!("fat-tree k={k} after failure"), &last.expect("trials >= 1"));
    let worst = *times.iter().max().expect("trials >= 1");
    Ok((median(&mut times), worst))
}

fn criterion_6(h: &mut Hygiene) -> Outcome {
    let (m8, w8) = failure_median(8, 100, h)?;
    let (m16, w16) = failure_median(16, 40, h)?;
    let detail = format!(
        "link failure median/worst: k=8 {:.2}/{:.2} ms (< 100), k=16 {:.2}/{:.2} ms (< 500)",
        ms(m8),
        ms(w8),
        ms(m16),
        ms(w16)
    );
    if m8 < Duration::from_millis(100) && m16 < Duration::from_millis(500) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7(h: &mut Hygiene) -> Outcome {
    // Waypoint latency on k=16.
    let s = strategy(StrategyKind::SdUtilization);
    let big = fattree(16, WeightPlan::uniform(7));
    let base = engine(&big, s, 1);
    let nodes: Vec<NodeId> = base.graph().node_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pe = PolicyEngine::new();
    let mut times = Vec::new();
    for i in 0..200 {
        let picked: Vec<NodeId> = nodes.choose_multiple(&mut rng, 7).copied().collect();
        let text = picked.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" : ");
        let id = format!("wp{i}");
        let policy = Policy::parse(&id, &text).map_err(|e| e.to_string())?;
        let t = Instant::now();
        pe.add(policy, &base).map_err(|e| e.to_string())?;
        let out = pe.evaluate(&id, &base).map_err(|e| e.to_string())?;
        times.push(t.elapsed());
        let mut at = out.path.hops.iter();
        if !picked.iter().all(|w| at.any(|h| h == w)) {
            return Err(format!("waypoint path {} misses a stop of {text}", out.path));
        }
    }
    let wp = median(&mut times);

    // NOT constraints and backups on k=8.
    let small = fattree(8, WeightPlan::uniform(8));
    let base = engine(&small, s, 1);
    let nodes: Vec<NodeId> = base.graph().node_ids().collect();
    let mut pe = PolicyEngine::new();
    let mut not_checked = 0;
    for i in 0..60 {
        let picked: Vec<NodeId> = nodes.choose_multiple(&mut rng, 2 + i % 3).copied().collect();
        let (src, dst, excluded) = (picked[0], picked[1], &picked[2..]);
        let body: String = excluded.iter().map(|n| format!("!{n} : ")).collect();
        let id = format!("not{i}");
        pe.add(Policy::parse(&id, &format!("{src} : {body}{dst}")).map_err(|e| e.to_string())?, &base)
            .map_err(|e| e.to_string())?;
        let mut cut = base.graph().clone();
        for &n in excluded {
            cut.apply_change(&TopologyChange::RemoveNode { id: n }, &s).map_err(|e| e.to_string())?;
        }
        let expected = oracle::apsp_additive(&cut, &s).map_err(|e| e.to_string())?;
        match (pe.evaluate(&id, &base), expected.get(src, dst)) {
            (Ok(out), Some(opt)) => {
                if out.path.cost != opt.cost
                    || out.path.length != opt.length
                    || excluded.iter().any(|n| out.path.contains(*n))
                    || fold_cost(&cut, &s, &out.path.hops) != Some(opt.cost)
                {
                    return Err(format!("NOT policy {id}: {} vs optimum {}", out.path, opt.cost));
                }
            }
            (Err(_), None) => {}
            (got, want) => return Err(format!("NOT policy {id}: {got:?} vs {want:?}")),
        }
        not_checked += 1;
    }
    if let Some((_, fork)) = pe.fork_of("not0") {
        h.check("NOT fork", fork);
    }

    let mut disjoint = 0;
    let mut no_backup = 0;
    let mut violations = 0;
    for i in 0..200 {
        let mut p = nodes.choose_multiple(&mut rng, 2);
        let (src, dst) = (*p.next().unwrap(), *p.next().unwrap());
        let id = format!("b{i}");
        let policy = Policy { id: id.clone(), origin: src, target: dst, body: PolicyBody::Backup };
        pe.add(policy, &base).map_err(|e| e.to_string())?;
        match pe.evaluate(&id, &base) {
            Ok(out) => {
                let norm = |p| {
                    path_links(p).into_iter().map(|(a, b): (NodeId, NodeId)| (a.min(b), a.max(b))).collect::<BTreeSet<_>>()
                };
                let backup = out.backup.as_ref().expect("backup path");
                if norm(&out.path).is_disjoint(&norm(backup)) {
                    disjoint += 1;
                } else {
                    violations += 1;
                }
            }
            Err(_) => no_backup += 1,
        }
        pe.remove(&id).map_err(|e| e.to_string())?;
    }
    h.check("policy base k=8", &base);
    let detail = format!(
        "waypoint k=5 median {:.3} ms (< 10 ms); {not_checked} NOT results match the oracle; {disjoint} backups link-disjoint, {violations} violations, {no_backup} without backup",
        ms(wp)
    );
    if wp < Duration::from_millis(10) && violations == 0 && disjoint + no_backup == 200 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::SdUtilization);
    let topo = fattree(8, WeightPlan::uniform(9));
    let blocks = workloads::gen_mixed_events(&topo, 50, 2, 8);
    let mut runs: Vec<Vec<Vec<ForwardingRule>>> = Vec::new();
    for workers in [1, 2, 4] {
        let mut e = engine(&topo, s, workers);
        let mut batches = Vec::new();
        for b in &blocks {
            batches.push(e.step_epoch(&b.changes()).map_err(|e| e.to_string())?.changes);
        }
        h.check(&format!("{workers} workers"), &e);
        runs.push(batches);
    }
    for (w, run) in [2, 4].iter().zip(&runs[1..]) {
        for (epoch, (a, b)) in runs[0].iter().zip(run).enumerate() {
            let key = |rs: &Vec<ForwardingRule>| rs.iter().map(|r| r.key()).collect::<BTreeSet<_>>();
            if key(a) != key(b) {
                return Err(format!("epoch {} differs between 1 and {w} workers", epoch + 1));
            }
        }
    }
    let total: usize = runs[0].iter().map(Vec::len).sum();
    Ok(format!("100 events, {total} rule changes identical for 1, 2 and 4 workers"))
}

fn criterion_9(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::SdUtilization);
    let topo = fattree(8, WeightPlan::uniform(10));
    let base = engine(&topo, s, 1);
    let batches = 100;
    let mut table = vec!["batch_size  updates/s  median_ms".to_string()];
    for size in [1, 2, 4, 8, 16, 32, 64] {
        let sc = Scenario { kind: ScenarioKind::WeightUpdateBatches, trials: batches, batch_size: size, seed: 9 };
        let blocks = workloads::gen_weight_update_batches(&topo, &s, &sc).map_err(|e| e.to_string())?;
        let mut e = base.clone();
        let mut times = Vec::new();
        for b in &blocks {
            let changes = b.changes();
            let t = Instant::now();
            e.step_epoch(&changes).map_err(|e| e.to_string())?;
            times.push(t.elapsed());
            let expected = oracle::apsp_additive(e.graph(), &s).map_err(|e| e.to_string())?;
            if let Some(d) = divergence(&e.snapshot(), &expected) {
                return Err(format!("batch size {size}, batch {}: {d}", b.epoch));
            }
        }
        let total: Duration = times.iter().sum();
        let rate = (size * batches) as f64 / total.as_secs_f64();
        table.push(format!("{size:>10}  {rate:>9.0}  {:>9.3}", ms(median(&mut times))));
        h.check(&format!("weight batches {size}"), &e);
    }
    for row in &table {
        println!("      {row}");
    }
    Ok(format!("7 batch sizes x {batches} batches match the oracle after every batch"))
}

/// Changes that turn `now` back into `then`.
fn reverting_changes(now: &GraphStore, then: &GraphStore) -> Vec<TopologyChange> {
    let links = |g: &GraphStore| -> BTreeMap<EdgeKey, (i64, deltapath_core::LinkProperties)> {
        g.edges().filter(|(k, _)| k.src < k.dst).map(|(k, e)| (*k, (e.multiplicity, e.props))).collect()
    };
    let (a, b) = (links(now), links(then));
    let mut out = Vec::new();
    for n in then.nodes().filter(|n| !now.contains_node(n.id)) {
        out.push(TopologyChange::AddNode { id: n.id, label: n.label });
    }
    for (k, (m, _)) in &a {
        let keep = b.get(k).map_or(0, |x| x.0);
        for _ in keep..*m {
            out.push(TopologyChange::RemoveLink { a: k.src, b: k.dst, weight: Some(k.w.0) });
        }
    }
    for (k, (m, props)) in &b {
        let have = a.get(k).map_or(0, |x| x.0);
        for _ in have..*m {
            out.push(TopologyChange::AddLink { a: k.src, b: k.dst, props: *props });
        }
    }
    for n in now.node_ids().filter(|n| !then.contains_node(*n)) {
        out.push(TopologyChange::RemoveNode { id: n });
    }
    out
}

fn criterion_10(h: &mut Hygiene) -> Outcome {
    let s = strategy(StrategyKind::SdUtilization);
    let mut reverted = 0;
    for (name, topo) in [("fat-tree k=8", fattree(8, WeightPlan::uniform(11))), ("random graph", random_fixture(77))] {
        let initial = engine(&topo, s, 2);
        let mut e = initial.clone();
        for b in workloads::gen_mixed_events(&topo, 30, 3, 10) {
            e.step_epoch(&b.changes()).map_err(|e| e.to_string())?;
        }
        let back = reverting_changes(e.graph(), initial.graph());
        e.step_epoch(&back).map_err(|e| e.to_string())?;
        let edges = |g: &GraphStore| g.edges().map(|(k, e)| (*k, e.multiplicity)).collect::<Vec<_>>();
        if edges(e.graph()) != edges(initial.graph()) {
            return Err(format!("{name}: reverting 90 events does not restore the link set"));
        }
        if e.snapshot() != initial.snapshot() {
            let (a, b) = (e.snapshot(), initial.snapshot());
            let diff = b.iter().find(|(k, r)| a.get(k) != Some(r));
            return Err(format!(
                "{name}: reverting 90 events changes {} rules, e.g. {:?} now {:?}",
                b.iter().filter(|(k, r)| a.get(k) != Some(r)).count() + a.keys().filter(|k| !b.contains_key(k)).count(),
                diff,
                diff.and_then(|(k, _)| a.get(k))
            ));
        }
        if e.candidate_count() != initial.candidate_count() {
            return Err(format!("{name}: candidate store not restored"));
        }
        h.check(&format!("{name} reverted"), &e);
        reverted += 1;
    }
    if !h.failures.is_empty() {
        return Err(format!("{} of {} engines dirty: {}", h.failures.len(), h.engines, h.failures[0]));
    }
    Ok(format!(
        "{} engines free of zero multiplicities and stale state; {reverted} reverted workloads restore the initial view",
        h.engines
    ))
}

fn main() -> ExitCode {
    let mut h = Hygiene::default();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS  [{n:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  [{n:>2}] {name}: {detail}")
            }
        }
    };
    let (c1, c2) = criteria_1_2(&mut h);
    report(1, "oracle equivalence", c1);
    report(2, "incremental equals re-initialization", c2);
    report(3, "locality", criterion_3(&mut h));
    report(4, "shortest-widest correctness", criterion_4(&mut h));
    report(5, "path retrieval latency", criterion_5(&mut h));
    report(6, "failure recovery latency", criterion_6(&mut h));
    report(7, "policy evaluation", criterion_7(&mut h));
    report(8, "determinism under parallelism", criterion_8(&mut h));
    report(9, "weight-update batches", criterion_9(&mut h));
    report(10, "delta hygiene", criterion_10(&mut h));
    if failed == 0 {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
