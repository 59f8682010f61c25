//! End-to-end pipeline for one scenario: beamforming in the first SPs,
//! controller planning, then the timed simulation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::beamforming::{run_beamforming, BeamMeasurementReport, BeamformingMode, BfEnv, TrainedLink};
use crate::config::{BfRunConfig, ScenarioConfig, StrategyName};
use crate::controller::{
    assign_slots_with, build_interference_graph, GlobalSchedule, GreedyStrategy, InterferenceGraph, MaxRateStrategy,
    SlotStrategy, StarvedLink,
};
use crate::domain::{NodeId, NodeModel};
use crate::engine::{EngineConfig, Metrics, World};
use crate::error::{Error, Result};
use crate::trace::{Trace, TraceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sp: u64,
    pub mode: BeamformingMode,
    pub initiator: NodeId,
    pub responders: Vec<NodeId>,
    pub trained: usize,
    pub untrained: Vec<NodeId>,
    pub ssw_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Training {
    pub links: Vec<TrainedLink>,
    pub reports: Vec<BeamMeasurementReport>,
    pub runs: Vec<RunSummary>,
}

impl Training {
    /// SP instances consumed by training.
    pub fn sps_used(&self) -> u64 {
        self.runs.len() as u64
    }

    fn covers(&self, a: &NodeId, b: &NodeId) -> bool {
        self.links
            .iter()
            .any(|l| (&l.initiator_id == a && &l.responder_id == b) || (&l.initiator_id == b && &l.responder_id == a))
    }
}

/// Demands the plan cannot serve in full.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub starved: Vec<StarvedLink>,
    pub basic_missing: Vec<(NodeId, NodeId)>,
}

impl Infeasibility {
    pub fn is_empty(&self) -> bool {
        self.starved.is_empty() && self.basic_missing.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub graph: InterferenceGraph,
    pub schedule: GlobalSchedule,
    pub infeasibility: Infeasibility,
}

/// Zero-slot demands from the controller plus any demand granted less
/// than it asked for.
pub fn infeasibility(schedule: &GlobalSchedule) -> Infeasibility {
    let mut starved = schedule.starved.clone();
    for g in &schedule.grants {
        let already = starved.iter().any(|s| s.ap == g.ap && s.sta == g.sta && s.direction == g.direction);
        if !already && g.granted_bps < g.demanded_bps * (1.0 - 1e-9) {
            starved.push(StarvedLink {
                ap: g.ap.clone(),
                sta: g.sta.clone(),
                direction: g.direction,
                reason: format!("insufficient_capacity: granted {:.0} of {:.0} bps", g.granted_bps, g.demanded_bps),
            });
        }
    }
    Infeasibility { starved, basic_missing: schedule.basic_missing.clone() }
}

fn find<'a>(nodes: &'a [NodeModel], id: &NodeId) -> Result<&'a NodeModel> {
    nodes.iter().find(|n| &n.id == id).ok_or_else(|| Error::invalid(format!("unknown node {id}")))
}

/// Explicit runs first, then one individual run per untrained demand pair.
pub fn train(cfg: &ScenarioConfig, nodes: &[NodeModel], trace: &mut Trace) -> Result<Training> {
    let link = &cfg.link_budget;
    let mcs = cfg.mcs_table()?;
    let env = BfEnv { link, mcs: &mcs, timing: cfg.beamforming.timing, sizes: cfg.frame_sizes };
    let mut out = Training::default();
    let mut runs: Vec<BfRunConfig> = cfg.beamforming.runs.clone();
    let mut pending_auto = cfg.beamforming.auto_train;
    let mut i = 0;
    loop {
        if i == runs.len() {
            if !pending_auto {
                break;
            }
            pending_auto = false;
            let mut seen = BTreeSet::new();
            for d in &cfg.demands {
                if !out.covers(&d.ap, &d.sta) && seen.insert((d.ap.clone(), d.sta.clone())) {
                    runs.push(BfRunConfig {
                        mode: BeamformingMode::Individual,
                        initiator: d.ap.clone(),
                        responders: vec![d.sta.clone()],
                    });
                }
            }
            if i == runs.len() {
                break;
            }
        }
        let r = &runs[i];
        let sp = i as u64;
        let entry = cfg.beacon.sp_entry(0, sp);
        let initiator = find(nodes, &r.initiator)?;
        let responders: Vec<&NodeModel> = r.responders.iter().map(|id| find(nodes, id)).collect::<Result<_>>()?;
        let o = run_beamforming(r.mode, initiator, &responders, &env, &entry, trace)?;
        out.runs.push(RunSummary {
            sp,
            mode: r.mode,
            initiator: r.initiator.clone(),
            responders: r.responders.clone(),
            trained: o.links.len(),
            untrained: o.untrained.clone(),
            ssw_count: o.ssw_count,
        });
        for l in o.links {
            if !out.covers(&l.initiator_id, &l.responder_id) {
                out.links.push(l);
            }
        }
        out.reports.extend(o.reports);
        i += 1;
    }
    Ok(out)
}

pub fn plan(cfg: &ScenarioConfig, nodes: &[NodeModel], training: &Training, trace: &mut Trace) -> Result<Plan> {
    let graph = build_interference_graph(nodes, &training.links, &training.reports, &cfg.link_budget)?;
    let strategy: &dyn SlotStrategy = match cfg.controller.strategy {
        StrategyName::Greedy => &GreedyStrategy,
        StrategyName::MaxRate => &MaxRateStrategy,
    };
    let mcs = cfg.mcs_table()?;
    let schedule = assign_slots_with(
        strategy,
        &graph,
        &cfg.demand_specs(),
        &cfg.slots.template(),
        &mcs,
        &cfg.controller_config(),
    )?;
    let t = cfg.beacon.sp_start_us(training.sps_used());
    if graph.model_derived > 0 {
        trace.note(
            t,
            TraceKind::Planner,
            None,
            format!("model-derived interference for {} pairs", graph.model_derived),
        );
    }
    let dump = serde_json::to_string(&schedule).map_err(|e| Error::Assertion(e.to_string()))?;
    trace.note(t, TraceKind::Planner, None, dump);
    let infeasibility = infeasibility(&schedule);
    Ok(Plan { graph, schedule, infeasibility })
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("infeasible schedule: {} starved link(s)", .0.starved.len())]
    Infeasible(Box<Infeasibility>),
    #[error(transparent)]
    Model(#[from] Error),
}

#[derive(Debug)]
pub struct ScenarioOutput {
    pub training: Training,
    pub plan: Plan,
    pub metrics: Metrics,
    pub trace: Trace,
}

/// Train, plan and simulate for `cfg.duration_ms` after training.
/// Infeasible plans stop before the simulation.
pub fn run_scenario(cfg: &ScenarioConfig) -> std::result::Result<ScenarioOutput, ScenarioError> {
    let nodes = cfg.node_models()?;
    let mut trace = Trace::new();
    let training = train(cfg, &nodes, &mut trace)?;
    let plan = plan(cfg, &nodes, &training, &mut trace)?;
    if !plan.infeasibility.is_empty() {
        return Err(ScenarioError::Infeasible(Box::new(plan.infeasibility)));
    }
    let mut ecfg = EngineConfig::new(cfg.beacon, cfg.slots.template());
    ecfg.seed = cfg.seed;
    ecfg.sizes = cfg.frame_sizes;
    ecfg.start_sp = training.sps_used();
    ecfg.maintenance = cfg.maintenance.clone();
    let mut world = World::new(
        nodes,
        cfg.link_budget.clone(),
        cfg.mcs_table()?,
        &plan.schedule,
        &plan.graph,
        cfg.flow_specs(),
        ecfg,
    )?;
    let ssw: usize = training.runs.iter().map(|r| r.ssw_count).sum();
    world.note_beamforming(training.runs.len() as u64, ssw as u64);
    let end = world.data_start_us() + cfg.duration_us();
    let metrics = world.run_until(end, &mut trace)?;
    Ok(ScenarioOutput { training, plan, metrics, trace })
}
