//! Topology and event-file generation.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use deltapath_core::formats::{write_events, Topology};
use deltapath_core::workloads::{self, Scenario, ScenarioKind, WeightPlan};
use deltapath_core::Strategy;

use crate::{load_topology, parse_strategy, write_output};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Plan {
    #[value(name = "hopcount")]
    HopCount,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    LinkFailure,
    SwitchFailure,
    WeightUpdates,
    PathRequests,
    /// Random link, weight and switch churn.
    Mixed,
}

impl Kind {
    pub fn scenario(self) -> Option<ScenarioKind> {
        match self {
            Kind::LinkFailure => Some(ScenarioKind::LinkFailure),
            Kind::SwitchFailure => Some(ScenarioKind::SwitchFailure),
            Kind::WeightUpdates => Some(ScenarioKind::WeightUpdateBatches),
            Kind::PathRequests => Some(ScenarioKind::PathRequestBatches),
            Kind::Mixed => None,
        }
    }
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Link weight plan.
    #[arg(long, value_enum, default_value = "hopcount")]
    plan: Plan,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// k-ary fat-tree.
    Fattree {
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Random r-regular switch graph.
    Jellyfish {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: usize,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Random connected graph with bounded degree.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3.0)]
        degree: f64,
        #[arg(long, default_value_t = 6)]
        max_degree: usize,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Event file for a workload scenario on a topology.
    Scenario {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        topology: PathBuf,
        /// Strategy whose optimal paths weight updates follow.
        #[arg(long, default_value = "hopcount", value_parser = parse_strategy)]
        strategy: Strategy,
        /// Trials, batches or epochs.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Events per batch or epoch.
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn finish(mut topo: Topology, plan: &PlanArgs) -> Result<()> {
    let p = match plan.plan {
        Plan::HopCount => WeightPlan::hop_count(),
        Plan::Uniform => WeightPlan::uniform(plan.seed),
    };
    p.apply(&mut topo);
    log::info!("generated {} switches, {} links", topo.nodes.len(), topo.links.len());
    write_output(plan.output.as_deref(), &topo.write())
}

pub fn gen(cmd: GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Fattree { k, plan } => finish(workloads::gen_fattree(k)?, &plan),
        GenCommand::Jellyfish { n, r, plan } => {
            finish(workloads::gen_jellyfish(n, r, plan.seed)?, &plan)
        }
        GenCommand::Random { n, degree, max_degree, plan } => {
            anyhow::ensure!(n >= 2, "need at least two switches");
            finish(workloads::gen_random_graph(n, degree, max_degree, plan.seed), &plan)
        }
        GenCommand::Scenario { kind, topology, strategy, trials, batch_size, seed, output } => {
            let topo = load_topology(&topology)?;
            let blocks = match kind.scenario() {
                Some(kind) => {
                    let sc = Scenario { kind, trials, batch_size, seed };
                    workloads::gen_scenario(&topo, &strategy, &sc)
                        .with_context(|| format!("generating {kind:?}"))?
                }
                None => workloads::gen_mixed_events(&topo, trials, batch_size, seed),
            };
            write_output(output.as_deref(), &write_events(&blocks))
        }
    }
}
