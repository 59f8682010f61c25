//! Central slot planner: interference graph over directed links and a
//! coordinated DL/UL-separated slot assignment for every AP.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamMeasurementReport, TrainedLink};
use crate::channel::{link_snr_db, received_power_dbm, LinkBudgetConfig};
use crate::domain::{McsTable, NodeId, NodeModel};
use crate::error::{Error, Result};
use crate::schedule::{
    validate_schedule, BeaconLayout, Direction, ExtendedScheduleEntry, SlotCategory, TddSlotSchedule, TddSlotStructure,
    Violation,
};

/// One direction of a trained node pair, with the sectors locked by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLink {
    pub tx: NodeId,
    pub tx_sector: usize,
    pub rx: NodeId,
    pub rx_sector: usize,
    pub snr_db: f64,
}

impl GraphLink {
    fn shares_node(&self, other: &GraphLink) -> bool {
        let a = [&self.tx, &self.rx];
        a.contains(&&other.tx) || a.contains(&&other.rx)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterferenceGraph {
    pub vertices: Vec<GraphLink>,
    /// Unordered conflicting pairs, stored as (lower, higher) index.
    pub edges: BTreeSet<(usize, usize)>,
    /// Cross-link power values taken from the channel model because no
    /// measurement covered them.
    pub model_derived: usize,
}

impl InterferenceGraph {
    pub fn index_of(&self, tx: &NodeId, rx: &NodeId) -> Option<usize> {
        self.vertices.iter().position(|v| &v.tx == tx && &v.rx == rx)
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.edges.remove(&(a.min(b), a.max(b)));
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter().enumerate().all(|(i, &a)| set[i + 1..].iter().all(|&b| a != b && !self.adjacent(a, b)))
    }
}

fn node<'a>(nodes: &'a [NodeModel], id: &NodeId) -> Result<&'a NodeModel> {
    nodes.iter().find(|n| &n.id == id).ok_or_else(|| Error::invalid(format!("unknown node {id}")))
}

/// Measured power at `rx` on `rx_sector` from `tx` on `tx_sector`, if a
/// report covers that sector pair.
fn reported_power_dbm(
    reports: &[BeamMeasurementReport],
    tx: &NodeModel,
    tx_sector: usize,
    rx: &NodeId,
    rx_sector: usize,
    noise_dbm: f64,
) -> Option<f64> {
    reports
        .iter()
        .filter(|r| r.initiator_id == tx.id && &r.responder_id == rx)
        .flat_map(|r| &r.samples)
        .find(|s| s.initiator_sector == tx_sector && s.responder_sector == rx_sector)
        .map(|s| s.snr_db + noise_dbm)
}

/// Both directions of every trained pair become vertices. Two vertices
/// conflict when they share a node or when either transmitter puts more
/// than the interference limit into the other's receiver.
pub fn build_interference_graph(
    nodes: &[NodeModel],
    trained: &[TrainedLink],
    reports: &[BeamMeasurementReport],
    cfg: &LinkBudgetConfig,
) -> Result<InterferenceGraph> {
    let mut g = InterferenceGraph::default();
    for t in trained {
        let a = node(nodes, &t.initiator_id)?;
        let b = node(nodes, &t.responder_id)?;
        for (tx, ts, rx, rs) in
            [(a, t.initiator_sector, b, t.responder_sector), (b, t.responder_sector, a, t.initiator_sector)]
        {
            if g.index_of(&tx.id, &rx.id).is_some() {
                continue;
            }
            let snr_db = link_snr_db(tx, ts, rx, rs, cfg)?.snr_db;
            g.vertices.push(GraphLink { tx: tx.id.clone(), tx_sector: ts, rx: rx.id.clone(), rx_sector: rs, snr_db });
        }
    }
    let noise = cfg.noise_floor_dbm();
    let limit = cfg.interference_limit_dbm();
    let n = g.vertices.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&g.vertices[i], &g.vertices[j]);
            if a.shares_node(b) {
                g.add_edge(i, j);
                continue;
            }
            let mut conflict = false;
            for (x, y) in [(a, b), (b, a)] {
                let tx = node(nodes, &x.tx)?;
                let power = match reported_power_dbm(reports, tx, x.tx_sector, &y.rx, y.rx_sector, noise) {
                    Some(p) => p,
                    None => {
                        g.model_derived += 1;
                        received_power_dbm(tx, x.tx_sector, node(nodes, &y.rx)?, y.rx_sector, cfg)?
                    }
                };
                conflict |= power > limit;
            }
            if conflict {
                g.add_edge(i, j);
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    pub ap: NodeId,
    pub sta: NodeId,
    pub direction: Direction,
    pub rate_bps: f64,
}

impl DemandSpec {
    pub fn tx(&self) -> &NodeId {
        match self.direction {
            Direction::Downlink => &self.ap,
            Direction::Uplink => &self.sta,
        }
    }

    pub fn rx(&self) -> &NodeId {
        match self.direction {
            Direction::Downlink => &self.sta,
            Direction::Uplink => &self.ap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// DL:UL share of DATA slots when both directions carry demand.
    pub dl_share: u32,
    pub ul_share: u32,
    pub layout: BeaconLayout,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { dl_share: 3, ul_share: 1, layout: BeaconLayout::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSchedule {
    pub entry: ExtendedScheduleEntry,
    pub structure: TddSlotStructure,
    pub schedule: TddSlotSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub ap: NodeId,
    pub sta: NodeId,
    pub direction: Direction,
    pub mcs_index: Option<u8>,
    pub phy_rate_bps: f64,
    pub data_slots: Vec<usize>,
    pub demanded_bps: f64,
    pub granted_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarvedLink {
    pub ap: NodeId,
    pub sta: NodeId,
    pub direction: Direction,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSchedule {
    pub aps: BTreeMap<NodeId, ApSchedule>,
    pub grants: Vec<Grant>,
    /// Demands that received no DATA slot at all.
    pub starved: Vec<StarvedLink>,
    /// (transmitter, peer) pairs for which no BASIC slot could be placed.
    pub basic_missing: Vec<(NodeId, NodeId)>,
}

impl GlobalSchedule {
    pub fn is_feasible(&self) -> bool {
        self.starved.is_empty()
    }

    pub fn total_granted_bps(&self) -> f64 {
        self.grants.iter().map(|g| g.granted_bps).sum()
    }

    /// Vertex indices active in each slot of the shared grid.
    pub fn slot_links(&self, graph: &InterferenceGraph) -> Vec<Vec<usize>> {
        let n = self.aps.values().map(|a| a.structure.slots.len()).max().unwrap_or(0);
        let mut out = vec![Vec::new(); n];
        for a in self.aps.values() {
            for e in &a.schedule.entries {
                let Some(sta) = &e.assignee else { continue };
                let (tx, rx) = match e.direction {
                    Direction::Downlink => (&a.schedule.ap, sta),
                    Direction::Uplink => (sta, &a.schedule.ap),
                };
                if let (Some(v), Some(slot)) = (graph.index_of(tx, rx), out.get_mut(e.slot_index)) {
                    if !slot.contains(&v) {
                        slot.push(v);
                    }
                }
            }
        }
        out
    }
}

/// A link the planner may place in DATA slots.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub vertex: usize,
    pub demand: usize,
    pub direction: Direction,
    pub rate_bps: f64,
    pub phy_rate_bps: f64,
}

/// Fills the DATA slots of one direction pool given the slots already
/// occupied by BASIC placements.
pub trait SlotStrategy {
    fn name(&self) -> &'static str;

    /// `candidates` are sorted by demand descending; returns the vertices
    /// placed in each slot of `pool`.
    fn fill_pool(
        &self,
        graph: &InterferenceGraph,
        candidates: &[Candidate],
        pool: &[usize],
        slot_rate_scale: &dyn Fn(usize) -> f64,
    ) -> BTreeMap<usize, Vec<usize>>;
}

/// Round-robin over links in demand order until each has the slots it
/// needs, then every slot is topped up to a maximal independent set.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyStrategy;

impl SlotStrategy for GreedyStrategy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn fill_pool(
        &self,
        graph: &InterferenceGraph,
        candidates: &[Candidate],
        pool: &[usize],
        slot_rate_scale: &dyn Fn(usize) -> f64,
    ) -> BTreeMap<usize, Vec<usize>> {
        let mut slots: BTreeMap<usize, Vec<usize>> = pool.iter().map(|&s| (s, Vec::new())).collect();
        let fits = |set: &Vec<usize>, v: usize| set.iter().all(|&u| u != v && !graph.adjacent(u, v));
        let mut granted = vec![0.0; candidates.len()];
        let mut open: Vec<bool> = candidates.iter().map(|c| c.rate_bps > 0.0).collect();
        while open.iter().any(|&o| o) {
            for (i, c) in candidates.iter().enumerate() {
                if !open[i] {
                    continue;
                }
                let slot = pool.iter().copied().find(|s| fits(&slots[s], c.vertex));
                match slot {
                    Some(s) => {
                        slots.get_mut(&s).expect("pool slot").push(c.vertex);
                        granted[i] += slot_rate_scale(s) * c.phy_rate_bps;
                        if granted[i] >= c.rate_bps {
                            open[i] = false;
                        }
                    }
                    None => open[i] = false,
                }
            }
        }
        for s in pool {
            for c in candidates {
                if fits(&slots[s], c.vertex) {
                    slots.get_mut(s).expect("pool slot").push(c.vertex);
                }
            }
        }
        slots
    }
}

/// Every slot carries a maximum-rate independent set of the candidates.
/// Exponential in the candidate count; meant for small graphs.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxRateStrategy;

fn max_weight_set(
    graph: &InterferenceGraph,
    cands: &[(usize, f64)],
    chosen: &mut Vec<usize>,
    acc: f64,
    best: &mut (f64, Vec<usize>),
) {
    let Some((&(v, w), rest)) = cands.split_first() else {
        if acc > best.0 + 1e-9 {
            *best = (acc, chosen.clone());
        }
        return;
    };
    let upper: f64 = acc + cands.iter().map(|c| c.1).sum::<f64>();
    if upper <= best.0 + 1e-9 {
        return;
    }
    if chosen.iter().all(|&u| !graph.adjacent(u, v)) {
        chosen.push(v);
        max_weight_set(graph, rest, chosen, acc + w, best);
        chosen.pop();
    }
    max_weight_set(graph, rest, chosen, acc, best);
}

impl SlotStrategy for MaxRateStrategy {
    fn name(&self) -> &'static str {
        "max_rate"
    }

    fn fill_pool(
        &self,
        graph: &InterferenceGraph,
        candidates: &[Candidate],
        pool: &[usize],
        _slot_rate_scale: &dyn Fn(usize) -> f64,
    ) -> BTreeMap<usize, Vec<usize>> {
        let cands: Vec<(usize, f64)> =
            candidates.iter().filter(|c| c.rate_bps > 0.0).map(|c| (c.vertex, c.phy_rate_bps)).collect();
        let mut best = (0.0, Vec::new());
        max_weight_set(graph, &cands, &mut Vec::new(), 0.0, &mut best);
        pool.iter().map(|&s| (s, best.1.clone())).collect()
    }
}

/// Plan with the default greedy strategy.
pub fn assign_slots(
    graph: &InterferenceGraph,
    demands: &[DemandSpec],
    template: &TddSlotStructure,
    mcs: &McsTable,
    cfg: &ControllerConfig,
) -> Result<GlobalSchedule> {
    assign_slots_with(&GreedyStrategy, graph, demands, template, mcs, cfg)
}

pub fn assign_slots_with(
    strategy: &dyn SlotStrategy,
    graph: &InterferenceGraph,
    demands: &[DemandSpec],
    template: &TddSlotStructure,
    mcs: &McsTable,
    cfg: &ControllerConfig,
) -> Result<GlobalSchedule> {
    if let Some(v) = template.violations().first() {
        return Err(Error::Structure(format!("slot structure template: {v}")));
    }
    cfg.layout.validate(template.interval_duration_us)?;
    if cfg.dl_share + cfg.ul_share == 0 {
        return Err(Error::invalid("DL:UL shares must not both be zero"));
    }
    for d in demands {
        if !(d.rate_bps >= 0.0) {
            return Err(Error::invalid(format!("demand {}->{} has a negative rate", d.tx(), d.rx())));
        }
        if d.ap == d.sta {
            return Err(Error::invalid(format!("demand on {} names the same node twice", d.ap)));
        }
    }

    let mut starved = Vec::new();
    let mut cands: Vec<Candidate> = Vec::new();
    for (i, d) in demands.iter().enumerate() {
        if d.rate_bps == 0.0 {
            continue;
        }
        let starve = |reason: &str| StarvedLink {
            ap: d.ap.clone(),
            sta: d.sta.clone(),
            direction: d.direction,
            reason: reason.to_string(),
        };
        let Some(v) = graph.index_of(d.tx(), d.rx()) else {
            starved.push(starve("untrained"));
            continue;
        };
        let Some(entry) = mcs.select(graph.vertices[v].snr_db) else {
            starved.push(starve("below_mcs0"));
            continue;
        };
        cands.push(Candidate {
            vertex: v,
            demand: i,
            direction: d.direction,
            rate_bps: d.rate_bps,
            phy_rate_bps: entry.phy_rate_bps,
        });
    }
    // demand descending, ties by link ids
    cands.sort_by(|a, b| {
        let (da, db) = (&demands[a.demand], &demands[b.demand]);
        b.rate_bps.total_cmp(&a.rate_bps).then_with(|| (da.tx(), da.rx()).cmp(&(db.tx(), db.rx())))
    });

    let mut active: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut aps: BTreeMap<NodeId, ApSchedule> = BTreeMap::new();
    let mut ap_ids: BTreeSet<NodeId> = demands.iter().map(|d| d.ap.clone()).collect();
    ap_ids.extend(cands.iter().map(|c| demands[c.demand].ap.clone()));
    for (k, ap) in ap_ids.iter().enumerate() {
        let id = u8::try_from(k + 1).map_err(|_| Error::invalid("more than 255 APs"))?;
        let mut structure = template.clone();
        structure.allocation_id = id;
        aps.insert(
            ap.clone(),
            ApSchedule { entry: cfg.layout.sp_entry(id, 0), structure, schedule: TddSlotSchedule::new(id, ap.clone()) },
        );
    }

    // BASIC: every STA transmits to its AP each interval, and the AP to the STA
    // when uplink data must be acknowledged.
    let mut needs: Vec<(NodeId, NodeId, Direction)> = Vec::new();
    for c in &cands {
        let d = &demands[c.demand];
        let up = (d.ap.clone(), d.sta.clone(), Direction::Uplink);
        if !needs.contains(&up) {
            needs.push(up);
        }
        let down = (d.ap.clone(), d.sta.clone(), Direction::Downlink);
        if d.direction == Direction::Uplink && !needs.contains(&down) {
            needs.push(down);
        }
    }
    let basic: Vec<usize> = template.basic_slots().collect();
    let mut basic_missing = Vec::new();
    for (ap, sta, dir) in needs {
        let (tx, rx) = match dir {
            Direction::Downlink => (&ap, &sta),
            Direction::Uplink => (&sta, &ap),
        };
        let Some(v) = graph.index_of(tx, rx) else {
            basic_missing.push((tx.clone(), rx.clone()));
            continue;
        };
        let slot = basic
            .iter()
            .copied()
            .find(|s| active.get(s).is_none_or(|set| set.iter().all(|&u| u != v && !graph.adjacent(u, v))));
        match slot {
            Some(s) => {
                active.entry(s).or_default().push(v);
                aps.get_mut(&ap).expect("ap schedule").schedule.assign(s, sta.clone(), dir);
            }
            None => basic_missing.push((tx.clone(), rx.clone())),
        }
    }
    // a STA that cannot acknowledge gets no DATA slots and gives back its BASIC ones
    let lacking: BTreeSet<(NodeId, NodeId)> = cands
        .iter()
        .map(|c| &demands[c.demand])
        .filter(|d| basic_missing.iter().any(|(a, b)| (a == &d.sta && b == &d.ap) || (a == &d.ap && b == &d.sta)))
        .map(|d| (d.ap.clone(), d.sta.clone()))
        .collect();
    for (ap, sta) in &lacking {
        let sched = &mut aps.get_mut(ap).expect("ap schedule").schedule;
        for e in sched.entries.iter().filter(|e| e.assignee.as_ref() == Some(sta)) {
            let (tx, rx) = match e.direction {
                Direction::Downlink => (ap, sta),
                Direction::Uplink => (sta, ap),
            };
            if let (Some(v), Some(set)) = (graph.index_of(tx, rx), active.get_mut(&e.slot_index)) {
                set.retain(|&u| u != v);
            }
        }
        sched.entries.retain(|e| e.assignee.as_ref() != Some(sta));
    }
    cands.retain(|c| {
        let d = &demands[c.demand];
        if lacking.contains(&(d.ap.clone(), d.sta.clone())) {
            starved.push(StarvedLink {
                ap: d.ap.clone(),
                sta: d.sta.clone(),
                direction: d.direction,
                reason: "no_basic_slot".into(),
            });
            false
        } else {
            true
        }
    });

    let data: Vec<usize> = template.data_slots().collect();
    let has_dl = cands.iter().any(|c| c.direction == Direction::Downlink);
    let has_ul = cands.iter().any(|c| c.direction == Direction::Uplink);
    let n_dl = match (has_dl, has_ul) {
        (true, true) if data.len() >= 2 => {
            let share = cfg.dl_share as f64 / (cfg.dl_share + cfg.ul_share) as f64;
            ((data.len() as f64 * share).round() as usize).clamp(1, data.len() - 1)
        }
        (_, false) => data.len(),
        _ => 0,
    };
    let interval = template.interval_duration_us as f64;
    let scale = |s: usize| template.slots[s].duration_us as f64 / interval;
    for (dir, pool) in [(Direction::Downlink, &data[..n_dl]), (Direction::Uplink, &data[n_dl..])] {
        let pool_cands: Vec<Candidate> = cands.iter().filter(|c| c.direction == dir).cloned().collect();
        if pool_cands.is_empty() || pool.is_empty() {
            continue;
        }
        for (s, set) in strategy.fill_pool(graph, &pool_cands, pool, &scale) {
            for v in set {
                let c = pool_cands.iter().find(|c| c.vertex == v).expect("strategy returned a candidate");
                let d = &demands[c.demand];
                active.entry(s).or_default().push(v);
                aps.get_mut(&d.ap).expect("ap schedule").schedule.assign(s, d.sta.clone(), dir);
            }
        }
    }

    let mut grants = Vec::new();
    for c in &cands {
        let d = &demands[c.demand];
        let mut data_slots: Vec<usize> =
            data.iter().copied().filter(|s| active.get(s).is_some_and(|set| set.contains(&c.vertex))).collect();
        data_slots.sort_unstable();
        let granted_bps: f64 = data_slots.iter().map(|&s| scale(s) * c.phy_rate_bps).sum();
        if data_slots.is_empty() {
            starved.push(StarvedLink {
                ap: d.ap.clone(),
                sta: d.sta.clone(),
                direction: d.direction,
                reason: "no_data_slot".into(),
            });
        }
        grants.push(Grant {
            ap: d.ap.clone(),
            sta: d.sta.clone(),
            direction: d.direction,
            mcs_index: mcs.select(graph.vertices[c.vertex].snr_db).map(|e| e.mcs_index),
            phy_rate_bps: c.phy_rate_bps,
            data_slots,
            demanded_bps: d.rate_bps,
            granted_bps,
        });
    }
    for a in aps.values_mut() {
        a.schedule.entries.sort_by_key(|e| e.slot_index);
    }
    Ok(GlobalSchedule { aps, grants, starved, basic_missing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum GlobalViolation {
    InterferenceConflict { slot: usize, a: usize, b: usize },
    HalfDuplex { slot: usize, node: NodeId },
    DuplexMixing { slot: usize },
    BelowMcs0 { slot: usize, link: usize },
    UnknownLink { slot: usize, tx: NodeId, rx: NodeId },
    MissingBasic { sta: NodeId, ap: NodeId },
    Structure { ap: NodeId, detail: Violation },
}

impl fmt::Display for GlobalViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GlobalViolation::InterferenceConflict { slot, a, b } => {
                write!(f, "interference conflict in slot {slot} between links {a} and {b}")
            }
            GlobalViolation::HalfDuplex { slot, node } => write!(f, "half-duplex violation in slot {slot} at {node}"),
            GlobalViolation::DuplexMixing { slot } => write!(f, "duplex mixing in slot {slot}"),
            GlobalViolation::BelowMcs0 { slot, link } => write!(f, "link {link} in slot {slot} is below MCS 0"),
            GlobalViolation::UnknownLink { slot, tx, rx } => write!(f, "untrained link {tx}->{rx} in slot {slot}"),
            GlobalViolation::MissingBasic { sta, ap } => write!(f, "{sta} has no BASIC transmit slot to {ap}"),
            GlobalViolation::Structure { ap, detail } => write!(f, "{ap}: {detail}"),
        }
    }
}

/// Check a global schedule against the graph; every violation is returned.
pub fn verify_global(
    schedule: &GlobalSchedule,
    graph: &InterferenceGraph,
    mcs: &McsTable,
) -> std::result::Result<(), Vec<GlobalViolation>> {
    let mut out = Vec::new();
    let mut per_slot: BTreeMap<usize, Vec<(usize, Direction, SlotCategory)>> = BTreeMap::new();
    for a in schedule.aps.values() {
        if let Err(vs) = validate_schedule(&a.structure, &a.schedule) {
            out.extend(vs.into_iter().map(|detail| GlobalViolation::Structure { ap: a.schedule.ap.clone(), detail }));
        }
        let mut basic_tx: BTreeSet<&NodeId> = BTreeSet::new();
        let mut participants: BTreeSet<&NodeId> = BTreeSet::new();
        for e in &a.schedule.entries {
            let Some(sta) = &e.assignee else { continue };
            let Some(spec) = a.structure.slots.get(e.slot_index) else { continue };
            participants.insert(sta);
            if spec.category == SlotCategory::Basic && e.direction == Direction::Uplink {
                basic_tx.insert(sta);
            }
            let (tx, rx) = match e.direction {
                Direction::Downlink => (&a.schedule.ap, sta),
                Direction::Uplink => (sta, &a.schedule.ap),
            };
            match graph.index_of(tx, rx) {
                Some(v) => per_slot.entry(e.slot_index).or_default().push((v, e.direction, spec.category)),
                None => out.push(GlobalViolation::UnknownLink { slot: e.slot_index, tx: tx.clone(), rx: rx.clone() }),
            }
        }
        for sta in participants.difference(&basic_tx) {
            out.push(GlobalViolation::MissingBasic { sta: (*sta).clone(), ap: a.schedule.ap.clone() });
        }
    }
    for (&slot, links) in &per_slot {
        let mut tx_nodes: BTreeSet<&NodeId> = BTreeSet::new();
        let mut rx_nodes: BTreeSet<&NodeId> = BTreeSet::new();
        for (i, &(a, _, _)) in links.iter().enumerate() {
            let v = &graph.vertices[a];
            if mcs.select(v.snr_db).is_none() {
                out.push(GlobalViolation::BelowMcs0 { slot, link: a });
            }
            for &(b, _, _) in &links[i + 1..] {
                if graph.adjacent(a, b) {
                    out.push(GlobalViolation::InterferenceConflict { slot, a: a.min(b), b: a.max(b) });
                }
            }
            if !tx_nodes.insert(&v.tx) || rx_nodes.contains(&v.tx) {
                out.push(GlobalViolation::HalfDuplex { slot, node: v.tx.clone() });
            }
            if !rx_nodes.insert(&v.rx) || tx_nodes.contains(&v.rx) {
                out.push(GlobalViolation::HalfDuplex { slot, node: v.rx.clone() });
            }
        }
        let data_dirs: BTreeSet<Direction> = links.iter().filter(|l| l.2 == SlotCategory::Data).map(|l| l.1).collect();
        if data_dirs.len() > 1 {
            out.push(GlobalViolation::DuplexMixing { slot });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
