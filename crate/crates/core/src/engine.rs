//! Discrete-event engine: slot boundaries drive frame planning on the
//! coordinated grid, frames propagate with airtime and delay, receivers
//! decode against threshold and interference, and maintenance timers run
//! alongside.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::channel::{link_snr_db, propagation_delay_us, received_power_dbm, LinkBudgetConfig};
use crate::controller::{GlobalSchedule, InterferenceGraph};
use crate::domain::{McsTable, NodeId, NodeModel, REQUIREMENTS};
use crate::error::{Error, Result};
use crate::event::{EventKind, EventQueue};
use crate::frame::{airtime_us, bits_in, Fragment, FrameSizes, TddFrame};
use crate::maintenance::{
    advance_clock, build_announce, emit_link_measurement_report, handle_periodic_report_request, keepalive_check,
    resync_clock, Liveness, MaintenanceElement, MeasuredLink, PeriodicReportRequest, ReportDecision, SlotGrant,
    TpcFields, TpcLimits, DEFAULT_SYNC_TOLERANCE_US,
};
use crate::schedule::{
    can_access_tdd_sp, expand_sp, is_frame_allowed_in_tdd_slot, next_basic_tx_slot_to, AbsoluteSlot, BeaconLayout,
    Direction, SlotCategory, TddSlotSchedule, TddSlotStructure,
};
use crate::trace::{SlotRef, Trace, TraceFrame, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficModel {
    /// The queue never runs dry.
    Saturated,
    /// One MPDU every `payload_bits / rate_bps` seconds.
    Cbr { rate_bps: f64 },
    /// Exponential inter-arrival times, seeded.
    Poisson { rate_bps: f64 },
    /// Planned for but never offered any traffic.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub ap: NodeId,
    pub sta: NodeId,
    pub direction: Direction,
    pub traffic: TrafficModel,
}

impl FlowSpec {
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
pub struct TpcConfig {
    pub target_rsni_db: f64,
    pub max_step_db: f64,
}

impl Default for TpcConfig {
    fn default() -> Self {
        TpcConfig { target_rsni_db: 20.0, max_step_db: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicReportSpec {
    /// Sends the request in its first slot towards the responder.
    pub requester: NodeId,
    pub responder: NodeId,
    /// `start_time_us` counts from the start of scheduled traffic.
    pub request: PeriodicReportRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    /// Turns off keep-alive, heartbeat and clock ticks (reports still run).
    pub enabled: bool,
    pub keepalive_period_us: u64,
    pub keepalive_timeout_us: u64,
    pub tick_us: u64,
    pub heartbeat: bool,
    pub sync_tolerance_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resync_period_us: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpc: Option<TpcConfig>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub periodic_reports: Vec<PeriodicReportSpec>,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        MaintenanceConfig {
            enabled: true,
            keepalive_period_us: 100_000,
            keepalive_timeout_us: 300_000,
            tick_us: 10_000,
            heartbeat: true,
            sync_tolerance_us: DEFAULT_SYNC_TOLERANCE_US,
            resync_period_us: None,
            tpc: None,
            periodic_reports: Vec::new(),
        }
    }
}

impl MaintenanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            if self.keepalive_period_us == 0 || self.keepalive_timeout_us == 0 || self.tick_us == 0 {
                return Err(Error::invalid("maintenance periods must be positive"));
            }
            if self.resync_period_us == Some(0) {
                return Err(Error::invalid("resync period must be positive"));
            }
        }
        if let Some(t) = self.tpc {
            if !(t.max_step_db > 0.0) {
                return Err(Error::invalid("TPC max step must be positive"));
            }
        }
        for r in &self.periodic_reports {
            r.request.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub seed: u64,
    pub sizes: FrameSizes,
    pub layout: BeaconLayout,
    /// Slot grid shared by every AP; slot boundaries follow it even when
    /// nothing is scheduled.
    pub template: TddSlotStructure,
    /// First SP instance carrying scheduled traffic.
    pub start_sp: u64,
    pub maintenance: MaintenanceConfig,
}

impl EngineConfig {
    pub fn new(layout: BeaconLayout, template: TddSlotStructure) -> Self {
        EngineConfig {
            seed: 0,
            sizes: FrameSizes::default(),
            layout,
            template,
            start_sp: 0,
            maintenance: MaintenanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub ap: NodeId,
    pub sta: NodeId,
    pub direction: Direction,
    pub distance_m: f64,
    /// MAC bits (payload plus overhead) that became eligible for sending.
    pub offered_bits: u64,
    /// MAC bits received in decoded fragments.
    pub delivered_bits: u64,
    pub dropped_bits: u64,
    /// Still queued or in flight at the snapshot.
    pub queued_bits: u64,
    pub delivered_mpdus: u64,
    /// Payload bits of fully received MPDUs.
    pub goodput_bits: u64,
    /// Eligible time to reception of the MPDU's last fragment.
    pub latency_us: Vec<u64>,
    pub ack_delay_us: Vec<u64>,
    pub snr_db: Vec<f64>,
    pub assigned_data_slots: u64,
    pub used_data_slots: u64,
}

impl FlowMetrics {
    pub fn goodput_bps(&self, duration_us: u64) -> f64 {
        if duration_us == 0 {
            0.0
        } else {
            self.goodput_bits as f64 * 1e6 / duration_us as f64
        }
    }

    pub fn utilization(&self) -> f64 {
        if self.assigned_data_slots == 0 {
            0.0
        } else {
            self.used_data_slots as f64 / self.assigned_data_slots as f64
        }
    }

    pub fn max_latency_us(&self) -> Option<u64> {
        self.latency_us.iter().copied().max()
    }

    pub fn mean_latency_us(&self) -> Option<f64> {
        (!self.latency_us.is_empty()).then(|| self.latency_us.iter().sum::<u64>() as f64 / self.latency_us.len() as f64)
    }

    pub fn max_ack_delay_us(&self) -> Option<u64> {
        self.ack_delay_us.iter().copied().max()
    }
}

/// Per-hop requirement verdicts for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequirementCheck {
    pub hop_ok: bool,
    /// Only meaningful for downlink flows.
    pub dl_rate_ok: bool,
    pub latency_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub duration_us: u64,
    pub flows: Vec<FlowMetrics>,
    pub dead_links: Vec<(NodeId, NodeId)>,
    pub ack_no_opportunity: u64,
    pub prohibited_drops: u64,
    pub lost_frames: u64,
    pub bf_sweeps: u64,
    pub ssw_frames: u64,
}

impl Metrics {
    pub fn requirements(&self, flow: &FlowMetrics) -> RequirementCheck {
        RequirementCheck {
            hop_ok: REQUIREMENTS.hop_ok(flow.distance_m),
            dl_rate_ok: flow.direction == Direction::Downlink
                && REQUIREMENTS.dl_rate_ok(flow.goodput_bps(self.duration_us)),
            latency_ok: flow.max_latency_us().is_some_and(|l| REQUIREMENTS.latency_ok(l as f64 / 1e6)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    /// Slot `pos` (offset order) of interval `interval` in SP instance `sp`.
    Slot {
        sp: u64,
        interval: usize,
        pos: usize,
    },
    TxStart(usize),
    RxComplete(usize),
    KeepAlive,
    Tick,
}

#[derive(Debug, Clone)]
struct Mpdu {
    id: u64,
    arrival_us: u64,
    bits: u64,
}

#[derive(Debug, Clone)]
struct Progress {
    total: u64,
    received: u64,
    lost: u64,
    arrival_us: u64,
    retried: bool,
    dropped: bool,
}

#[derive(Debug)]
struct FlowState {
    spec: FlowSpec,
    queue: VecDeque<Mpdu>,
    progress: BTreeMap<u64, Progress>,
    inflight_bits: u64,
    arrivals: u64,
    next_arrival: Option<u64>,
    poisson_clock: f64,
    rng: ChaCha8Rng,
    m: FlowMetrics,
}

#[derive(Debug, Clone)]
enum CtrlBody {
    Ready(TddFrame),
    /// Built from the live channel when sent.
    Report {
        requester: usize,
    },
}

#[derive(Debug, Clone)]
struct CtrlFrame {
    body: CtrlBody,
    not_before: u64,
    /// Must start exactly at this slot start.
    exact: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct PendingAck {
    due: u64,
    acked: Vec<u64>,
    block: bool,
    samples: Vec<(usize, u64)>,
}

#[derive(Debug, Clone)]
struct Transmission {
    src: usize,
    dst: usize,
    tx_sector: usize,
    rx_sector: usize,
    start: u64,
    end: u64,
    snr_db: f64,
    threshold_db: f64,
    frame: TddFrame,
    slot: SlotRef,
    flow: Option<usize>,
}

#[derive(Debug)]
struct ApRun {
    ap: usize,
    structure: TddSlotStructure,
    schedule: TddSlotSchedule,
}

/// One simulation world. Everything is ordered (no hash iteration), so a
/// given configuration and seed always yields the same trace.
#[derive(Debug)]
pub struct World {
    nodes: Vec<NodeModel>,
    index: BTreeMap<NodeId, usize>,
    link: LinkBudgetConfig,
    mcs: McsTable,
    cfg: EngineConfig,
    aps: Vec<ApRun>,
    /// (tx, rx) → (tx sector, rx sector) from training.
    sectors: BTreeMap<(usize, usize), (usize, usize)>,
    /// Unordered node pair → AP run owning the pair's slots.
    pair_ap: BTreeMap<(usize, usize), usize>,
    order: Vec<usize>,
    flows: Vec<FlowState>,
    flows_by_pair: BTreeMap<(usize, usize), Vec<usize>>,
    expansions: BTreeMap<(usize, u64), Vec<AbsoluteSlot>>,
    queue: EventQueue<Ev>,
    txs: Vec<Transmission>,
    acks: BTreeMap<(usize, usize), Vec<PendingAck>>,
    ctrl: BTreeMap<(usize, usize), VecDeque<CtrlFrame>>,
    last_rx: BTreeMap<(usize, usize), u64>,
    dead: BTreeSet<(usize, usize)>,
    report_seq: BTreeMap<(usize, usize), u32>,
    next_mpdu: u64,
    ticks: u64,
    started: bool,
    metrics: Metrics,
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn assertion(e: Error) -> Error {
    match e {
        Error::Assertion(_) => e,
        other => Error::Assertion(other.to_string()),
    }
}

impl World {
    pub fn new(
        nodes: Vec<NodeModel>,
        link: LinkBudgetConfig,
        mcs: McsTable,
        schedule: &GlobalSchedule,
        graph: &InterferenceGraph,
        flows: Vec<FlowSpec>,
        cfg: EngineConfig,
    ) -> Result<World> {
        cfg.layout.validate(cfg.template.interval_duration_us)?;
        cfg.maintenance.validate()?;
        if let Some(v) = cfg.template.violations().first() {
            return Err(Error::Structure(format!("slot template: {v}")));
        }
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node {}", n.id)));
            }
        }
        let lookup = |id: &NodeId| index.get(id).copied().ok_or_else(|| Error::invalid(format!("unknown node {id}")));

        let mut sectors = BTreeMap::new();
        for v in &graph.vertices {
            sectors.insert((lookup(&v.tx)?, lookup(&v.rx)?), (v.tx_sector, v.rx_sector));
        }
        let mut aps = Vec::new();
        let mut pair_ap = BTreeMap::new();
        for (id, a) in &schedule.aps {
            let ap = lookup(id)?;
            let same_grid = a.structure.interval_duration_us == cfg.template.interval_duration_us
                && a.structure.slots.len() == cfg.template.slots.len()
                && a.structure
                    .slots
                    .iter()
                    .zip(&cfg.template.slots)
                    .all(|(x, y)| x.start_offset_us == y.start_offset_us);
            if !same_grid {
                return Err(Error::invalid(format!("slot structure of {id} does not match the shared grid")));
            }
            for e in &a.schedule.entries {
                if let Some(sta) = &e.assignee {
                    pair_ap.entry(pair(ap, lookup(sta)?)).or_insert(aps.len());
                }
            }
            aps.push(ApRun { ap, structure: a.structure.clone(), schedule: a.schedule.clone() });
        }

        let mut order: Vec<usize> = (0..cfg.template.slots.len()).collect();
        order.sort_by_key(|&i| (cfg.template.slots[i].start_offset_us, i));

        let mut states = Vec::new();
        let mut flows_by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (k, spec) in flows.into_iter().enumerate() {
            let tx = lookup(spec.tx())?;
            let rx = lookup(spec.rx())?;
            if let TrafficModel::Cbr { rate_bps } | TrafficModel::Poisson { rate_bps } = spec.traffic {
                if !(rate_bps > 0.0) {
                    return Err(Error::invalid(format!("flow {}->{} needs a positive rate", spec.tx(), spec.rx())));
                }
            }
            flows_by_pair.entry((tx, rx)).or_default().push(k);
            let m = FlowMetrics {
                ap: spec.ap.clone(),
                sta: spec.sta.clone(),
                direction: spec.direction,
                distance_m: nodes[tx].position.distance_to(&nodes[rx].position),
                ..Default::default()
            };
            states.push(FlowState {
                spec,
                queue: VecDeque::new(),
                progress: BTreeMap::new(),
                inflight_bits: 0,
                arrivals: 0,
                next_arrival: None,
                poisson_clock: 0.0,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64)),
                m,
            });
        }
        for r in &cfg.maintenance.periodic_reports {
            let (a, b) = (lookup(&r.requester)?, lookup(&r.responder)?);
            if !sectors.contains_key(&(a, b)) || !sectors.contains_key(&(b, a)) {
                return Err(Error::invalid(format!(
                    "periodic reports between untrained nodes {} and {}",
                    r.requester, r.responder
                )));
            }
        }

        Ok(World {
            nodes,
            index,
            link,
            mcs,
            cfg,
            aps,
            sectors,
            pair_ap,
            order,
            flows: states,
            flows_by_pair,
            expansions: BTreeMap::new(),
            queue: EventQueue::new(),
            txs: Vec::new(),
            acks: BTreeMap::new(),
            ctrl: BTreeMap::new(),
            last_rx: BTreeMap::new(),
            dead: BTreeSet::new(),
            report_seq: BTreeMap::new(),
            next_mpdu: 0,
            ticks: 0,
            started: false,
            metrics: Metrics::default(),
        })
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeModel> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn now_us(&self) -> u64 {
        self.queue.now_us()
    }

    /// Start of scheduled traffic.
    pub fn data_start_us(&self) -> u64 {
        self.cfg.layout.sp_start_us(self.cfg.start_sp)
    }

    /// Record beamforming effort in the metrics.
    pub fn note_beamforming(&mut self, sweeps: u64, ssw_frames: u64) {
        self.metrics.bf_sweeps += sweeps;
        self.metrics.ssw_frames += ssw_frames;
    }

    /// Queue a control or management frame for the next slot `from`
    /// transmits to `to`. Frames prohibited inside TDD slots are dropped
    /// and traced; returns whether the frame was queued.
    pub fn enqueue_control(&mut self, from: &NodeId, to: &NodeId, frame: TddFrame, trace: &mut Trace) -> Result<bool> {
        let (a, b) = (self.idx(from)?, self.idx(to)?);
        let now = self.queue.now_us();
        if !is_frame_allowed_in_tdd_slot(frame.kind()) {
            self.metrics.prohibited_drops += 1;
            let tf = TraceFrame {
                kind: frame.kind(),
                src: from.clone(),
                dst: Some(to.clone()),
                tx_sector: None,
                rx_sector: None,
                start_us: now,
                end_us: now,
                snr_db: None,
                body: frame,
            };
            trace.push(now, TraceKind::FrameDropped, Some(from), None, Some(tf), Some("prohibited frame".into()));
            return Ok(false);
        }
        self.push_ctrl(a, b, CtrlFrame { body: CtrlBody::Ready(frame), not_before: now, exact: None });
        Ok(true)
    }

    fn idx(&self, id: &NodeId) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::invalid(format!("unknown node {id}")))
    }

    fn push_ctrl(&mut self, from: usize, to: usize, f: CtrlFrame) {
        self.ctrl.entry((from, to)).or_default().push_back(f);
    }

    fn expansion(&mut self, ap: usize, sp: u64) -> Result<&[AbsoluteSlot]> {
        if !self.expansions.contains_key(&(ap, sp)) {
            let run = &self.aps[ap];
            let entry = self.cfg.layout.sp_entry(run.structure.allocation_id, sp);
            let slots = expand_sp(&entry, &run.structure, &run.schedule).map_err(assertion)?;
            self.expansions.retain(|&(_, n), _| n + 2 >= sp);
            self.expansions.insert((ap, sp), slots);
        }
        Ok(&self.expansions[&(ap, sp)])
    }

    /// Slots of the current SP and the next one for `ap`.
    fn horizon(&mut self, ap: usize, now: u64) -> Result<Vec<AbsoluteSlot>> {
        let n = self.cfg.layout.sp_at_or_after(now).max(self.cfg.start_sp);
        let mut slots = self.expansion(ap, n)?.to_vec();
        slots.extend_from_slice(self.expansion(ap, n + 1)?);
        Ok(slots)
    }

    /// Start of the earliest slot at or after `t` in which `tx` sends to `rx`.
    fn next_tx_slot_start(&mut self, ap: usize, tx: usize, rx: usize, t: u64) -> Result<Option<u64>> {
        let (tx_id, rx_id) = (self.nodes[tx].id.clone(), self.nodes[rx].id.clone());
        let first = self.cfg.layout.sp_at_or_after(t).max(self.cfg.start_sp);
        for n in first..first + 2 * self.cfg.layout.sp_count as u64 + 2 {
            let hit = self.expansion(ap, n)?.iter().find(|s| s.start_us >= t && s.carries(&tx_id, &rx_id));
            if let Some(s) = hit {
                return Ok(Some(s.start_us));
            }
        }
        Ok(None)
    }

    fn slot_start(&self, sp: u64, interval: usize, pos: usize) -> u64 {
        self.cfg.layout.sp_start_us(sp)
            + interval as u64 * self.cfg.template.interval_duration_us
            + self.cfg.template.slots[self.order[pos]].start_offset_us
    }

    fn next_slot(&self, sp: u64, interval: usize, pos: usize) -> (u64, usize, usize) {
        let intervals = (self.cfg.layout.sp_duration_us / self.cfg.template.interval_duration_us) as usize;
        if pos + 1 < self.order.len() {
            (sp, interval, pos + 1)
        } else if interval + 1 < intervals {
            (sp, interval + 1, 0)
        } else {
            (sp + 1, 0, 0)
        }
    }

    fn start(&mut self) -> Result<()> {
        self.started = true;
        let t0 = self.data_start_us();
        if !self.order.is_empty() {
            let s = self.slot_start(self.cfg.start_sp, 0, 0);
            self.queue.schedule(s, EventKind::SlotBoundary, Ev::Slot { sp: self.cfg.start_sp, interval: 0, pos: 0 })?;
        }
        let scheduled: Vec<(usize, usize)> = self.pair_ap.keys().copied().collect();
        for &(a, b) in &scheduled {
            self.last_rx.insert((a, b), t0);
            self.last_rx.insert((b, a), t0);
        }
        for k in 0..self.flows.len() {
            self.flows[k].next_arrival = match self.flows[k].spec.traffic {
                TrafficModel::Cbr { .. } => Some(t0),
                TrafficModel::Poisson { .. } => {
                    self.flows[k].poisson_clock = t0 as f64;
                    Some(self.poisson_next(k))
                }
                _ => None,
            };
        }
        let m = self.cfg.maintenance.clone();
        if m.enabled {
            self.queue.schedule(t0, EventKind::Timer, Ev::KeepAlive)?;
            self.queue.schedule(t0 + m.tick_us, EventKind::MaintenanceTick, Ev::Tick)?;
            if m.heartbeat {
                for ap_run in 0..self.aps.len() {
                    let ap = self.aps[ap_run].ap;
                    let stas: BTreeSet<NodeId> =
                        self.aps[ap_run].schedule.entries.iter().filter_map(|e| e.assignee.clone()).collect();
                    for sta in stas {
                        let grants: Vec<SlotGrant> = self.aps[ap_run]
                            .schedule
                            .entries
                            .iter()
                            .filter(|e| e.assignee.as_ref() == Some(&sta))
                            .map(|e| SlotGrant { slot_index: e.slot_index, direction: e.direction })
                            .collect();
                        let params =
                            vec![("allocation_id".to_string(), self.aps[ap_run].structure.allocation_id.to_string())];
                        let frame = build_announce(
                            self.nodes[ap].id.clone(),
                            Some(sta.clone()),
                            vec![MaintenanceElement::Heartbeat { updated_params: params, tx_rx_slot_grants: grants }],
                            true,
                        )?;
                        let s = self.idx(&sta)?;
                        self.push_ctrl(
                            ap,
                            s,
                            CtrlFrame { body: CtrlBody::Ready(TddFrame::Announce(frame)), not_before: t0, exact: None },
                        );
                    }
                }
            }
        }
        for r in &m.periodic_reports {
            let (a, b) = (self.idx(&r.requester)?, self.idx(&r.responder)?);
            let mut request = r.request;
            request.start_time_us += t0;
            let frame = TddFrame::LinkMeasurementRequest { request };
            self.push_ctrl(a, b, CtrlFrame { body: CtrlBody::Ready(frame), not_before: t0, exact: None });
        }
        Ok(())
    }

    /// Process every event strictly before `t_end_us` and return a
    /// metrics snapshot. May be called repeatedly with growing end times.
    pub fn run_until(&mut self, t_end_us: u64, trace: &mut Trace) -> Result<Metrics> {
        if !self.started {
            self.start()?;
        }
        while let Some(t) = self.queue.peek_time() {
            if t >= t_end_us {
                break;
            }
            let ev = self.queue.pop().expect("peeked event");
            match ev.payload {
                Ev::Slot { sp, interval, pos } => self.on_slot(sp, interval, pos, t_end_us, trace)?,
                Ev::TxStart(i) => self.on_tx_start(i, trace),
                Ev::RxComplete(i) => self.on_rx_complete(i, trace)?,
                Ev::KeepAlive => self.on_keepalive(trace)?,
                Ev::Tick => self.on_tick(trace)?,
            }
        }
        Ok(self.collect_metrics(t_end_us))
    }

    /// Snapshot at `t_end_us`: arrivals up to the end are counted as
    /// offered even if they never reached a slot.
    pub fn collect_metrics(&mut self, t_end_us: u64) -> Metrics {
        for k in 0..self.flows.len() {
            if t_end_us > 0 {
                self.generate_arrivals(k, t_end_us - 1);
            }
        }
        let mut m = self.metrics.clone();
        m.duration_us = t_end_us.saturating_sub(self.data_start_us());
        m.flows = self
            .flows
            .iter()
            .map(|f| {
                let mut fm = f.m.clone();
                fm.queued_bits = f.queue.iter().map(|q| q.bits).sum::<u64>() + f.inflight_bits;
                fm
            })
            .collect();
        m.dead_links = self.dead.iter().map(|&(a, b)| (self.nodes[a].id.clone(), self.nodes[b].id.clone())).collect();
        m
    }

    fn poisson_next(&mut self, k: usize) -> u64 {
        let f = &mut self.flows[k];
        let TrafficModel::Poisson { rate_bps } = f.spec.traffic else {
            return u64::MAX;
        };
        let per_us = rate_bps / self.cfg.sizes.payload_bits() as f64 / 1e6;
        let exp = Exp::new(per_us).expect("positive rate");
        f.poisson_clock += exp.sample(&mut f.rng);
        f.poisson_clock.floor() as u64
    }

    fn new_mpdu(&mut self, k: usize, arrival_us: u64) {
        let bits = self.cfg.sizes.mpdu_bits();
        let id = self.next_mpdu;
        self.next_mpdu += 1;
        let f = &mut self.flows[k];
        f.m.offered_bits += bits;
        f.queue.push_back(Mpdu { id, arrival_us, bits });
        f.progress
            .insert(id, Progress { total: bits, received: 0, lost: 0, arrival_us, retried: false, dropped: false });
    }

    fn generate_arrivals(&mut self, k: usize, up_to: u64) {
        let t0 = self.data_start_us();
        while let Some(t) = self.flows[k].next_arrival.filter(|&t| t <= up_to) {
            self.new_mpdu(k, t);
            self.flows[k].arrivals += 1;
            let next = match self.flows[k].spec.traffic {
                TrafficModel::Cbr { rate_bps } => {
                    let gap = self.cfg.sizes.payload_bits() as f64 * 1e6 / rate_bps;
                    Some(t0 + (self.flows[k].arrivals as f64 * gap).floor() as u64)
                }
                TrafficModel::Poisson { .. } => Some(self.poisson_next(k)),
                _ => None,
            };
            self.flows[k].next_arrival = next;
        }
    }

    fn on_slot(&mut self, sp: u64, interval: usize, pos: usize, t_end: u64, trace: &mut Trace) -> Result<()> {
        let now = self.queue.now_us();
        let index = self.order[pos];
        let sref = SlotRef { sp, interval, index };
        trace.push(now, TraceKind::SlotBoundary, None, Some(sref), None, None);
        let (nsp, ni, np) = self.next_slot(sp, interval, pos);
        let next = self.slot_start(nsp, ni, np);
        if next < t_end {
            self.queue.schedule(next, EventKind::SlotBoundary, Ev::Slot { sp: nsp, interval: ni, pos: np })?;
        }

        let at = interval * self.order.len() + pos;
        let mut active: Vec<(AbsoluteSlot, usize, usize)> = Vec::new();
        for ap in 0..self.aps.len() {
            let slot = self.expansion(ap, sp)?[at].clone();
            debug_assert_eq!(slot.start_us, now);
            let (Some(tx), Some(rx)) = (slot.transmitter(), slot.receiver()) else { continue };
            let (tx, rx) = (self.idx(tx)?, self.idx(rx)?);
            active.push((slot, tx, rx));
        }
        let mut senders = BTreeSet::new();
        let mut receivers = BTreeSet::new();
        for (_, tx, rx) in &active {
            if !senders.insert(*tx) || !receivers.insert(*rx) || receivers.contains(tx) || senders.contains(rx) {
                return Err(Error::Assertion(format!(
                    "slot {index} at {now}us gives a node two roles ({} -> {})",
                    self.nodes[*tx].id, self.nodes[*rx].id
                )));
            }
        }
        for (slot, tx, rx) in active {
            self.plan_link(&slot, sref, tx, rx, trace)?;
        }
        Ok(())
    }

    fn plan_link(&mut self, slot: &AbsoluteSlot, sref: SlotRef, tx: usize, rx: usize, trace: &mut Trace) -> Result<()> {
        let s = slot.start_us;
        let entry = self.cfg.layout.sp_entry(slot.sp_allocation_id, sref.sp);
        let sta = if slot.direction == Some(Direction::Downlink) { rx } else { tx };
        if !can_access_tdd_sp(&self.nodes[sta], &entry) {
            trace.note(s, TraceKind::FrameDropped, Some(&self.nodes[sta].id), "not TDD capable");
            return Ok(());
        }
        let Some(&(ts, rs)) = self.sectors.get(&(tx, rx)) else {
            return Ok(());
        };
        if self.dead.contains(&pair(tx, rx)) {
            return Ok(());
        }
        let is_data = slot.category == SlotCategory::Data;
        let flows: Vec<usize> = self.flows_by_pair.get(&(tx, rx)).cloned().unwrap_or_default();
        if is_data {
            for &k in &flows {
                self.flows[k].m.assigned_data_slots += 1;
            }
        }
        let prop = propagation_delay_us(self.nodes[tx].position.distance_to(&self.nodes[rx].position));
        let limit = slot.end_us().saturating_sub(prop);
        let mut cursor = s;
        let ctrl_rate = self.mcs.lowest().phy_rate_bps;
        let ctrl_threshold = self.mcs.decode_threshold_db();

        // delayed acks due at this slot start go first
        let due: Vec<PendingAck> = match self.acks.get_mut(&(tx, rx)) {
            Some(list) => {
                let (now, later): (Vec<_>, Vec<_>) = list.drain(..).partition(|a| a.due <= s);
                *list = later;
                now
            }
            None => Vec::new(),
        };
        let mut merged = PendingAck { due: s, ..Default::default() };
        for a in due {
            if a.due < s {
                trace.note(
                    s,
                    TraceKind::FrameDropped,
                    Some(&self.nodes[tx].id),
                    format!("missed ack slot at {}us", a.due),
                );
                continue;
            }
            merged.acked.extend(a.acked);
            merged.block |= a.block;
            merged.samples.extend(a.samples);
        }
        if !merged.samples.is_empty() || merged.block || !merged.acked.is_empty() {
            merged.acked.sort_unstable();
            merged.acked.dedup();
            let frame = if merged.block { TddFrame::BlockAck { acked: merged.acked } } else { TddFrame::Ack };
            let air = airtime_us(self.cfg.sizes.control_bits(frame.kind()), ctrl_rate);
            if cursor + air <= limit {
                for (k, rx_time) in merged.samples {
                    self.flows[k].m.ack_delay_us.push(cursor - rx_time);
                }
                self.emit(tx, rx, ts, rs, cursor, air, prop, frame, ctrl_threshold, sref, None)?;
                cursor += air;
            }
        }

        // management frames: exact-time reports, then FIFO
        let mut pending = self.ctrl.remove(&(tx, rx)).unwrap_or_default();
        let mut keep = VecDeque::new();
        let mut exact_first: Vec<CtrlFrame> = Vec::new();
        let mut fifo: Vec<CtrlFrame> = Vec::new();
        for f in pending.drain(..) {
            match f.exact {
                Some(e) if e == s => exact_first.push(f),
                Some(e) if e < s => {
                    trace.note(
                        s,
                        TraceKind::FrameDropped,
                        Some(&self.nodes[tx].id),
                        format!("missed report slot at {e}us"),
                    );
                }
                Some(_) => keep.push_back(f),
                None if f.not_before <= s => fifo.push(f),
                None => keep.push_back(f),
            }
        }
        let mut blocked = false;
        for f in exact_first.into_iter().chain(fifo) {
            if blocked {
                keep.push_back(f);
                continue;
            }
            let frame = match &f.body {
                CtrlBody::Ready(frame) => frame.clone(),
                CtrlBody::Report { requester } => self.build_report(*requester, tx)?,
            };
            let air = airtime_us(self.cfg.sizes.control_bits(frame.kind()), ctrl_rate);
            if cursor + air > limit {
                blocked = f.exact.is_none();
                if f.exact.is_some() {
                    trace.note(s, TraceKind::FrameDropped, Some(&self.nodes[tx].id), "report does not fit its slot");
                } else {
                    keep.push_back(f);
                }
                continue;
            }
            self.emit(tx, rx, ts, rs, cursor, air, prop, frame, ctrl_threshold, sref, None)?;
            cursor += air;
        }
        // keep FIFO order for what is left
        let mut rest: Vec<CtrlFrame> = keep.into_iter().collect();
        rest.sort_by_key(|f| (f.exact.unwrap_or(0), f.not_before));
        if !rest.is_empty() {
            self.ctrl.insert((tx, rx), rest.into_iter().collect());
        }

        if !is_data {
            return Ok(());
        }
        for k in flows {
            let snr = link_snr_db(&self.nodes[tx], ts, &self.nodes[rx], rs, &self.link)?.snr_db;
            let Some(entry) = self.mcs.select(snr).copied() else { continue };
            let rate = entry.phy_rate_bps;
            if self.flows[k].spec.traffic == TrafficModel::Saturated {
                let cap = bits_in(limit.saturating_sub(cursor), rate);
                let queued: u64 = self.flows[k].queue.iter().map(|q| q.bits).sum();
                let mut have = queued;
                while have < cap {
                    self.new_mpdu(k, s);
                    have += self.cfg.sizes.mpdu_bits();
                }
            } else {
                self.generate_arrivals(k, s);
            }
            let mut cap = bits_in(limit.saturating_sub(cursor), rate);
            let mut fragments = Vec::new();
            let f = &mut self.flows[k];
            while cap > 0 {
                let Some(head) = f.queue.front_mut() else { break };
                if head.arrival_us > s {
                    break;
                }
                let take = head.bits.min(cap);
                head.bits -= take;
                cap -= take;
                let last = head.bits == 0;
                fragments.push(Fragment { mpdu: head.id, bits: take, last });
                if last {
                    f.queue.pop_front();
                }
            }
            if fragments.is_empty() {
                continue;
            }
            let bits: u64 = fragments.iter().map(|fr| fr.bits).sum();
            f.inflight_bits += bits;
            f.m.used_data_slots += 1;
            let air = airtime_us(bits, rate);
            let frame = TddFrame::Data { mcs: entry.mcs_index, bits, fragments };
            self.emit(tx, rx, ts, rs, cursor, air, prop, frame, entry.min_snr_db, sref, Some(k))?;
            cursor += air;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        src: usize,
        dst: usize,
        tx_sector: usize,
        rx_sector: usize,
        start: u64,
        air: u64,
        prop: u64,
        frame: TddFrame,
        threshold_db: f64,
        slot: SlotRef,
        flow: Option<usize>,
    ) -> Result<()> {
        let snr_db = link_snr_db(&self.nodes[src], tx_sector, &self.nodes[dst], rx_sector, &self.link)?.snr_db;
        let end = start + air;
        let t = Transmission { src, dst, tx_sector, rx_sector, start, end, snr_db, threshold_db, frame, slot, flow };
        self.txs.push(t);
        let i = self.txs.len() - 1;
        self.queue.schedule(start, EventKind::FrameTxStart, Ev::TxStart(i))?;
        self.queue.schedule(end + prop, EventKind::FrameRxComplete, Ev::RxComplete(i))?;
        Ok(())
    }

    fn trace_frame(&self, t: &Transmission, with_rx: bool) -> TraceFrame {
        TraceFrame {
            kind: t.frame.kind(),
            src: self.nodes[t.src].id.clone(),
            dst: Some(self.nodes[t.dst].id.clone()),
            tx_sector: Some(t.tx_sector),
            rx_sector: with_rx.then_some(t.rx_sector),
            start_us: t.start,
            end_us: t.end,
            snr_db: with_rx.then_some(t.snr_db),
            body: t.frame.clone(),
        }
    }

    fn on_tx_start(&mut self, i: usize, trace: &mut Trace) {
        let t = &self.txs[i];
        let tf = self.trace_frame(t, false);
        trace.push(t.start, TraceKind::FrameTxStart, Some(&self.nodes[t.src].id), Some(t.slot), Some(tf), None);
    }

    fn decode_outcome(&self, i: usize) -> Result<&'static str> {
        let x = &self.txs[i];
        if x.snr_db < x.threshold_db {
            return Ok("below_threshold");
        }
        let span = self.cfg.template.interval_duration_us;
        let limit = self.link.interference_limit_dbm();
        for (j, y) in self.txs.iter().enumerate().rev() {
            if y.start + span < x.start {
                break;
            }
            if j == i || y.start >= x.end || y.end <= x.start {
                continue;
            }
            if y.src == x.dst {
                return Ok("half_duplex");
            }
            if y.src == x.src {
                continue;
            }
            let p = received_power_dbm(&self.nodes[y.src], y.tx_sector, &self.nodes[x.dst], x.rx_sector, &self.link)?;
            if p > limit {
                return Ok("collision");
            }
        }
        Ok("ok")
    }

    fn on_rx_complete(&mut self, i: usize, trace: &mut Trace) -> Result<()> {
        let now = self.queue.now_us();
        let outcome = self.decode_outcome(i)?;
        let t = self.txs[i].clone();
        let tf = self.trace_frame(&t, true);
        trace.push(
            now,
            TraceKind::FrameRxComplete,
            Some(&self.nodes[t.dst].id),
            Some(t.slot),
            Some(tf),
            Some(outcome.into()),
        );
        let ok = outcome == "ok";
        if !ok {
            self.metrics.lost_frames += 1;
        } else {
            self.last_rx.insert((t.dst, t.src), now);
        }
        match &t.frame {
            TddFrame::Data { fragments, .. } => {
                let k = t.flow.expect("data frames belong to a flow");
                self.on_data(k, &t, fragments, ok, now, trace)?;
            }
            TddFrame::Announce(a) if ok && a.needs_ack => {
                self.schedule_ack(t.dst, t.src, now, Vec::new(), false, None, trace)?;
            }
            TddFrame::LinkMeasurementRequest { request } if ok => {
                self.on_report_request(t.dst, t.src, request, trace)?
            }
            TddFrame::LinkMeasurementReport(r) if ok => self.on_report(t.dst, r.rsni_db, trace),
            _ => {}
        }
        Ok(())
    }

    fn on_data(
        &mut self,
        k: usize,
        t: &Transmission,
        fragments: &[Fragment],
        ok: bool,
        now: u64,
        trace: &mut Trace,
    ) -> Result<()> {
        let payload = self.cfg.sizes.payload_bits();
        let mut acked = Vec::new();
        {
            let f = &mut self.flows[k];
            for fr in fragments {
                f.inflight_bits -= fr.bits;
                let Some(p) = f.progress.get_mut(&fr.mpdu) else { continue };
                if ok {
                    f.m.delivered_bits += fr.bits;
                    p.received += fr.bits;
                    acked.push(fr.mpdu);
                } else if !p.retried {
                    // one retry per MPDU, sent ahead of new traffic
                    p.retried = true;
                    f.queue.push_front(Mpdu { id: fr.mpdu, arrival_us: p.arrival_us, bits: fr.bits });
                } else {
                    p.dropped = true;
                    p.lost += fr.bits;
                    f.m.dropped_bits += fr.bits;
                }
                if p.received + p.lost == p.total {
                    if !p.dropped {
                        f.m.delivered_mpdus += 1;
                        f.m.goodput_bits += payload;
                        f.m.latency_us.push(now - p.arrival_us);
                    }
                    f.progress.remove(&fr.mpdu);
                }
            }
            if ok {
                f.m.snr_db.push(t.snr_db);
            }
        }
        if ok {
            self.schedule_ack(t.dst, t.src, now, acked, true, Some(k), trace)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn schedule_ack(
        &mut self,
        from: usize,
        to: usize,
        now: u64,
        acked: Vec<u64>,
        block: bool,
        flow: Option<usize>,
        trace: &mut Trace,
    ) -> Result<()> {
        let Some(&ap) = self.pair_ap.get(&pair(from, to)) else {
            return Ok(());
        };
        let slots = self.horizon(ap, now)?;
        let (from_id, to_id) = (self.nodes[from].id.clone(), self.nodes[to].id.clone());
        let due = match next_basic_tx_slot_to(&slots, &from_id, &to_id, now) {
            Ok(s) => s.start_us,
            Err(e @ Error::NoOpportunity { .. }) => {
                self.metrics.ack_no_opportunity += 1;
                trace.note(now, TraceKind::FrameDropped, Some(&from_id), e.to_string());
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let list = self.acks.entry((from, to)).or_default();
        let idx = match list.iter().position(|a| a.due == due) {
            Some(i) => i,
            None => {
                list.push(PendingAck { due, ..Default::default() });
                list.len() - 1
            }
        };
        let a = &mut list[idx];
        a.acked.extend(acked);
        a.block |= block;
        if let Some(k) = flow {
            a.samples.push((k, now));
        }
        Ok(())
    }

    fn on_report_request(
        &mut self,
        responder: usize,
        requester: usize,
        req: &PeriodicReportRequest,
        trace: &mut Trace,
    ) -> Result<()> {
        let now = self.queue.now_us();
        let Some(&ap) = self.pair_ap.get(&pair(responder, requester)) else {
            return Ok(());
        };
        let mut starts = BTreeMap::new();
        for t in req.nominal_times() {
            starts.insert(t, self.next_tx_slot_start(ap, responder, requester, t.max(now))?);
        }
        let decision =
            handle_periodic_report_request(|t| starts.get(&t).copied().flatten(), req, self.cfg.layout.sp_duration_us);
        let id = self.nodes[responder].id.clone();
        match decision {
            ReportDecision::Accept { schedule } => {
                trace.note(now, TraceKind::Timer, Some(&id), format!("periodic reports accepted: {}", schedule.len()));
                for r in schedule {
                    self.push_ctrl(
                        responder,
                        requester,
                        CtrlFrame {
                            body: CtrlBody::Report { requester },
                            not_before: r.slot_start_us,
                            exact: Some(r.slot_start_us),
                        },
                    );
                }
            }
            ReportDecision::Reject { nominal_us } => {
                trace.note(now, TraceKind::Timer, Some(&id), format!("periodic reports rejected at {nominal_us}us"));
            }
        }
        Ok(())
    }

    fn build_report(&mut self, requester: usize, reporter: usize) -> Result<TddFrame> {
        let trained =
            self.sectors.contains_key(&(requester, reporter)) && !self.dead.contains(&pair(requester, reporter));
        let (ts, rs) = self.sectors.get(&(requester, reporter)).copied().unwrap_or((0, 0));
        let sample = link_snr_db(&self.nodes[requester], ts, &self.nodes[reporter], rs, &self.link)?;
        let seq = self.report_seq.entry((requester, reporter)).or_insert(0);
        let link =
            MeasuredLink { peer: self.nodes[requester].id.clone(), reporter: self.nodes[reporter].id.clone(), trained };
        let tpc = TpcFields { tx_power_dbm: vec![self.nodes[reporter].tx_power_dbm()], link_margin_db: Vec::new() };
        let report = emit_link_measurement_report(&link, &sample, *seq, tpc)?;
        *seq += 1;
        Ok(TddFrame::LinkMeasurementReport(report))
    }

    fn on_report(&mut self, requester: usize, rsni_db: f64, trace: &mut Trace) {
        let Some(tpc) = self.cfg.maintenance.tpc else { return };
        let node = &mut self.nodes[requester];
        let limits = TpcLimits {
            min_dbm: node.power_limits.min_dbm,
            max_dbm: node.power_limits.max_dbm,
            max_step_db: tpc.max_step_db,
        };
        let old = node.tx_power_dbm();
        let new = crate::maintenance::tpc_update(old, rsni_db, tpc.target_rsni_db, &limits);
        let applied = node.set_tx_power_dbm(new);
        let now = self.queue.now_us();
        trace.note(now, TraceKind::Timer, Some(&self.nodes[requester].id), format!("tpc {old:.2} -> {applied:.2} dBm"));
    }

    fn on_keepalive(&mut self, trace: &mut Trace) -> Result<()> {
        let now = self.queue.now_us();
        let period = self.cfg.maintenance.keepalive_period_us;
        trace.note(now, TraceKind::Timer, None, "keep-alive");
        let pairs: Vec<((usize, usize), usize)> = self.pair_ap.iter().map(|(&p, &a)| (p, a)).collect();
        for ((a, b), ap) in pairs {
            if self.dead.contains(&(a, b)) {
                continue;
            }
            for (from, to) in [(a, b), (b, a)] {
                let to_id = self.nodes[to].id.clone();
                let from_id = self.nodes[from].id.clone();
                let run = &self.aps[ap];
                let rx_slots: Vec<usize> = run
                    .schedule
                    .entries
                    .iter()
                    .filter(|e| {
                        let sta_rx = e.direction == Direction::Downlink;
                        let node_is_ap = run.ap == from;
                        e.assignee.as_ref().is_some_and(|s| *s == from_id || *s == to_id) && (sta_rx != node_is_ap)
                    })
                    .map(|e| e.slot_index)
                    .collect();
                let clock = self.nodes[from].clock;
                let frame = build_announce(
                    from_id,
                    Some(to_id),
                    vec![
                        MaintenanceElement::KeepAlive { period_us: period, negotiated_rx_slots: rx_slots },
                        MaintenanceElement::TddSynchronization {
                            clock_quality: clock.quality,
                            accuracy_us: clock.offset_us.abs(),
                        },
                    ],
                    false,
                )?;
                self.push_ctrl(
                    from,
                    to,
                    CtrlFrame { body: CtrlBody::Ready(TddFrame::Announce(frame)), not_before: now, exact: None },
                );
            }
        }
        self.queue.schedule(now + period, EventKind::Timer, Ev::KeepAlive)?;
        Ok(())
    }

    fn on_tick(&mut self, trace: &mut Trace) -> Result<()> {
        let now = self.queue.now_us();
        let m = self.cfg.maintenance.clone();
        self.ticks += 1;
        trace.push(now, TraceKind::MaintenanceTick, None, None, None, None);
        for i in 0..self.nodes.len() {
            let before = self.nodes[i].clock;
            let mut after = advance_clock(before, m.tick_us, m.sync_tolerance_us);
            if let Some(p) = m.resync_period_us {
                if (self.ticks * m.tick_us) % p < m.tick_us {
                    after = resync_clock(after);
                }
            }
            if after.quality != before.quality {
                trace.note(now, TraceKind::Timer, Some(&self.nodes[i].id), format!("clock {:?}", after.quality));
            }
            self.nodes[i].clock = after;
        }
        let pairs: Vec<(usize, usize)> = self.pair_ap.keys().copied().collect();
        for (a, b) in pairs {
            if self.dead.contains(&(a, b)) {
                continue;
            }
            let stale = [(a, b), (b, a)].iter().any(|k| {
                let last = self.last_rx.get(k).copied().unwrap_or(0);
                keepalive_check(last, now, m.keepalive_timeout_us) == Liveness::Dead
            });
            if stale {
                self.dead.insert((a, b));
                let msg = format!("dead link {} <-> {}", self.nodes[a].id, self.nodes[b].id);
                trace.note(now, TraceKind::ControllerReport, None, msg);
            }
        }
        self.queue.schedule(now + m.tick_us, EventKind::MaintenanceTick, Ev::Tick)?;
        Ok(())
    }
}
