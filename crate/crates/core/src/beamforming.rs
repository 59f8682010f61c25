//! TDD beamforming: individual, group and beam-measurement modes as
//! initiator/responder state machines, plus a driver that runs them over
//! the deterministic channel.
//!
//! Timeline of one run starting at `t0` (all offsets in µs):
//!
//! ```text
//! sweep     SSW j at t0 + j·ssw_spacing, tx sector j / R, j < n_tx·R
//! windows   for each tx sector s, responder k:
//!             W(s,k) = t_fb + (s·K + k)·feedback_slot   feedback
//!             W(s,k) + ack_delay                        SSW Ack
//! announce  per acked responder k: initiator then responder Announce
//! ```
//!
//! Each responder rotates its receive sector every `ssw_spacing` while
//! sweeping, so with `R >= n_rx` every (tx, rx) pair is probed. After the
//! sweep it answers in the window of the transmit sector it heard best,
//! which is where the initiator listens on that same sector.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channel::{link_snr_db, propagation_delay_us, received_power_dbm, LinkBudgetConfig};
use crate::domain::{McsTable, NodeId, NodeModel};
use crate::error::{Error, Result};
use crate::frame::{airtime_us, FrameSizes, TddFrame};
use crate::maintenance::{AnnounceFrame, MaintenanceElement};
use crate::schedule::ExtendedScheduleEntry;
use crate::trace::{Trace, TraceFrame, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformingMode {
    Individual,
    Group,
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TddSswFrame {
    pub initiator: NodeId,
    pub tx_sector_index: usize,
    /// Per-responder offsets from this frame's start; empty in measurement mode.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feedback_offset_us: BTreeMap<NodeId, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ack_offset_us: BTreeMap<NodeId, u64>,
    pub end_of_training: bool,
    /// SSW frames still to follow; measurement mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_countdown: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TddSswFeedbackFrame {
    pub responder_id: NodeId,
    pub responder_sector_index: usize,
    pub echoed_tx_sector_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TddSswAckFrame {
    pub responder_id: NodeId,
    pub initiator_tx_sector: usize,
    pub responder_feedback_sector: usize,
    pub measured_snr_db: f64,
    pub end_of_training: bool,
    /// Offsets from this frame's start: (initiator Announce, responder Announce).
    pub announce_offsets_us: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLink {
    pub initiator_id: NodeId,
    pub responder_id: NodeId,
    pub initiator_sector: usize,
    pub responder_sector: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub initiator_sector: usize,
    pub responder_sector: usize,
    pub snr_db: f64,
}

/// Delivered to the controller, never over the air to the initiator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamMeasurementReport {
    pub responder_id: NodeId,
    pub initiator_id: NodeId,
    pub samples: Vec<MeasurementSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfTiming {
    pub ssw_spacing_us: u64,
    /// Window per (tx sector, responder) holding feedback then ack.
    pub feedback_slot_us: u64,
    /// Ack offset from the start of its feedback window.
    pub ack_delay_us: u64,
    pub announce_slot_us: u64,
    /// SSW repetitions per transmit sector; defaults to the largest
    /// responder codebook.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
}

impl Default for BfTiming {
    fn default() -> Self {
        BfTiming { ssw_spacing_us: 4, feedback_slot_us: 16, ack_delay_us: 8, announce_slot_us: 16, repetitions: None }
    }
}

impl BfTiming {
    pub fn validate(&self) -> Result<()> {
        if self.ssw_spacing_us == 0 || self.feedback_slot_us == 0 || self.announce_slot_us == 0 {
            return Err(Error::invalid("beamforming timing values must be positive"));
        }
        if self.ack_delay_us == 0 || self.ack_delay_us >= self.feedback_slot_us {
            return Err(Error::invalid("ack_delay_us must lie inside the feedback slot"));
        }
        if self.repetitions == Some(0) {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        Ok(())
    }
}

/// Highest SNR wins; ties go to the lowest sector index.
pub fn select_best_rx_sector(measurements: &[(usize, f64)]) -> Result<usize> {
    measurements
        .iter()
        .copied()
        .reduce(|best, m| if m.1 > best.1 || (m.1 == best.1 && m.0 < best.0) { m } else { best })
        .map(|(s, _)| s)
        .ok_or_else(|| Error::invalid("no sector measurements"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Probe {
    tx_sector: usize,
    rx_sector: usize,
    snr_db: f64,
    feedback_at: Option<u64>,
    ack_at: Option<u64>,
}

/// Best probe by SNR, ties by lowest (tx sector, rx sector).
fn best_probe(probes: &[Probe]) -> Option<Probe> {
    probes.iter().copied().reduce(|best, p| {
        let better = p.snr_db > best.snr_db
            || (p.snr_db == best.snr_db && (p.tx_sector, p.rx_sector) < (best.tx_sector, best.rx_sector));
        if better {
            p
        } else {
            best
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BfEvent {
    SlotTick { now: u64 },
    FrameReceived { now: u64, tx_start: u64, frame: TddFrame, snr_db: f64, rx_sector: usize },
    Timeout { now: u64 },
}

impl BfEvent {
    pub fn now(&self) -> u64 {
        match *self {
            BfEvent::SlotTick { now } | BfEvent::FrameReceived { now, .. } | BfEvent::Timeout { now } => now,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BfAction {
    Transmit { frame: TddFrame, sector: usize, to: Option<NodeId> },
    Listen { sector: usize },
    StopListening,
    Report(BeamMeasurementReport),
    Trained(TrainedLink),
    Dropped { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wakeup {
    Tick(u64),
    Timeout(u64),
}

impl Wakeup {
    pub fn at(self) -> u64 {
        match self {
            Wakeup::Tick(t) | Wakeup::Timeout(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Agenda {
    Ssw { j: usize },
    OpenWindow { s: usize, k: usize },
    CloseWindow { s: usize, k: usize },
    SendAnnounce { k: usize },
    HearAnnounce { k: usize },
}

#[derive(Debug, Clone)]
pub struct InitiatorState {
    pub id: NodeId,
    pub mode: BeamformingMode,
    responders: Vec<NodeId>,
    n_tx: usize,
    reps: usize,
    timing: BfTiming,
    sp_end: u64,
    t0: u64,
    agenda: Vec<(u64, Agenda)>,
    next: usize,
    listening: Option<usize>,
    /// Feedback heard in the currently open window.
    heard: Option<(TddSswFeedbackFrame, f64)>,
    /// Ack sector and announce times per acknowledged responder.
    acked: BTreeMap<usize, (usize, u64, u64)>,
    pub ssw_sent: usize,
}

impl InitiatorState {
    pub fn new(
        id: NodeId,
        mode: BeamformingMode,
        n_tx: usize,
        responders: Vec<NodeId>,
        reps: usize,
        timing: BfTiming,
        sp: &ExtendedScheduleEntry,
    ) -> Self {
        let t0 = sp.start_us;
        let k_n = responders.len();
        let sweep_len = n_tx * reps;
        let t_fb = t0 + sweep_len as u64 * timing.ssw_spacing_us;
        let mut agenda: Vec<(u64, Agenda)> =
            (0..sweep_len).map(|j| (t0 + j as u64 * timing.ssw_spacing_us, Agenda::Ssw { j })).collect();
        if mode != BeamformingMode::Measurement {
            for s in 0..n_tx {
                for k in 0..k_n {
                    let w = t_fb + (s * k_n + k) as u64 * timing.feedback_slot_us;
                    agenda.push((w, Agenda::OpenWindow { s, k }));
                    agenda.push((w + timing.ack_delay_us, Agenda::CloseWindow { s, k }));
                }
            }
            let t_an = t_fb + (n_tx * k_n) as u64 * timing.feedback_slot_us;
            for k in 0..k_n {
                let a = t_an + 2 * k as u64 * timing.announce_slot_us;
                agenda.push((a, Agenda::SendAnnounce { k }));
                agenda.push((a + timing.announce_slot_us, Agenda::HearAnnounce { k }));
            }
        }
        agenda.sort();
        InitiatorState {
            id,
            mode,
            responders,
            n_tx,
            reps,
            timing,
            sp_end: sp.start_us + sp.duration_us,
            t0,
            agenda,
            next: 0,
            listening: None,
            heard: None,
            acked: BTreeMap::new(),
            ssw_sent: 0,
        }
    }

    fn t_fb(&self) -> u64 {
        self.t0 + (self.n_tx * self.reps) as u64 * self.timing.ssw_spacing_us
    }

    fn window_start(&self, s: usize, k: usize) -> u64 {
        self.t_fb() + (s * self.responders.len() + k) as u64 * self.timing.feedback_slot_us
    }

    fn announce_start(&self, k: usize) -> u64 {
        self.t_fb()
            + (self.n_tx * self.responders.len()) as u64 * self.timing.feedback_slot_us
            + 2 * k as u64 * self.timing.announce_slot_us
    }

    /// End of the last scheduled activity.
    pub fn end_us(&self) -> u64 {
        self.agenda.last().map_or(0, |a| match a.1 {
            Agenda::HearAnnounce { .. } => a.0 + self.timing.announce_slot_us,
            _ => a.0 + self.timing.ssw_spacing_us,
        })
    }

    pub fn next_wakeup(&self) -> Option<Wakeup> {
        self.agenda.get(self.next).map(|&(t, a)| match a {
            Agenda::CloseWindow { .. } => Wakeup::Timeout(t),
            _ => Wakeup::Tick(t),
        })
    }

    pub fn listening_sector(&self) -> Option<usize> {
        self.listening
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.agenda.len()
    }

    pub fn step(&mut self, event: BfEvent) -> Result<Vec<BfAction>> {
        let now = event.now();
        if now > self.sp_end {
            return Err(Error::Protocol(format!(
                "initiator {} event at {now}us outside the SP ending at {}us",
                self.id, self.sp_end
            )));
        }
        match event {
            BfEvent::FrameReceived { frame, snr_db, rx_sector, .. } => Ok(self.on_frame(now, frame, snr_db, rx_sector)),
            BfEvent::SlotTick { .. } | BfEvent::Timeout { .. } => {
                let mut actions = Vec::new();
                while let Some(&(t, item)) = self.agenda.get(self.next) {
                    if t > now {
                        break;
                    }
                    self.next += 1;
                    self.run_agenda(now, item, &mut actions);
                }
                Ok(actions)
            }
        }
    }

    fn run_agenda(&mut self, now: u64, item: Agenda, out: &mut Vec<BfAction>) {
        match item {
            Agenda::Ssw { j } => {
                let s = j / self.reps;
                let total = self.n_tx * self.reps;
                let last = j + 1 == total;
                let frame = if self.mode == BeamformingMode::Measurement {
                    TddSswFrame {
                        initiator: self.id.clone(),
                        tx_sector_index: s,
                        feedback_offset_us: BTreeMap::new(),
                        ack_offset_us: BTreeMap::new(),
                        end_of_training: last,
                        slot_countdown: Some((total - 1 - j) as u32),
                    }
                } else {
                    let mut fb = BTreeMap::new();
                    let mut ack = BTreeMap::new();
                    for (k, r) in self.responders.iter().enumerate() {
                        let w = self.window_start(s, k);
                        fb.insert(r.clone(), w - now);
                        ack.insert(r.clone(), w + self.timing.ack_delay_us - now);
                    }
                    TddSswFrame {
                        initiator: self.id.clone(),
                        tx_sector_index: s,
                        feedback_offset_us: fb,
                        ack_offset_us: ack,
                        end_of_training: false,
                        slot_countdown: None,
                    }
                };
                self.ssw_sent += 1;
                out.push(BfAction::Transmit { frame: TddFrame::TddSsw(frame), sector: s, to: None });
            }
            Agenda::OpenWindow { s, .. } => {
                self.heard = None;
                self.listening = Some(s);
                // same sector that carried the SSW frames pointing here
                out.push(BfAction::Listen { sector: s });
            }
            Agenda::CloseWindow { s, k } => {
                self.listening = None;
                out.push(BfAction::StopListening);
                let Some((fb, snr)) = self.heard.take() else {
                    return;
                };
                if fb.responder_id != self.responders[k] || fb.echoed_tx_sector_index != s {
                    out.push(BfAction::Dropped {
                        reason: format!(
                            "feedback from {} for sector {} in window ({s}, {k})",
                            fb.responder_id, fb.echoed_tx_sector_index
                        ),
                    });
                    return;
                }
                let a_i = self.announce_start(k);
                let a_r = a_i + self.timing.announce_slot_us;
                self.acked.insert(k, (s, a_i, a_r));
                let ack = TddSswAckFrame {
                    responder_id: fb.responder_id.clone(),
                    initiator_tx_sector: s,
                    responder_feedback_sector: fb.responder_sector_index,
                    measured_snr_db: snr,
                    end_of_training: true,
                    announce_offsets_us: (a_i - now, a_r - now),
                };
                out.push(BfAction::Transmit { frame: TddFrame::TddSswAck(ack), sector: s, to: Some(fb.responder_id) });
            }
            Agenda::SendAnnounce { k } => {
                if let Some(&(s, _, _)) = self.acked.get(&k) {
                    let frame = stub_announce(&self.id, &self.responders[k]);
                    out.push(BfAction::Transmit {
                        frame: TddFrame::Announce(frame),
                        sector: s,
                        to: Some(self.responders[k].clone()),
                    });
                }
            }
            Agenda::HearAnnounce { k } => {
                if let Some(&(s, _, _)) = self.acked.get(&k) {
                    self.listening = Some(s);
                    out.push(BfAction::Listen { sector: s });
                }
            }
        }
    }

    fn on_frame(&mut self, _now: u64, frame: TddFrame, snr_db: f64, _rx_sector: usize) -> Vec<BfAction> {
        match frame {
            TddFrame::TddSswFeedback(fb) => {
                if !self.responders.contains(&fb.responder_id) {
                    return vec![BfAction::Dropped { reason: format!("feedback from untargeted {}", fb.responder_id) }];
                }
                self.heard = Some((fb, snr_db));
                Vec::new()
            }
            TddFrame::Announce(_) => {
                self.listening = None;
                vec![BfAction::StopListening]
            }
            other => vec![BfAction::Dropped { reason: format!("unexpected {:?} at initiator", other.kind()) }],
        }
    }
}

fn stub_announce(from: &NodeId, to: &NodeId) -> AnnounceFrame {
    AnnounceFrame {
        sender: from.clone(),
        receiver: Some(to.clone()),
        needs_ack: false,
        encrypted: false,
        elements: vec![MaintenanceElement::Heartbeat {
            updated_params: vec![("capabilities".into(), "tdd".into())],
            tx_rx_slot_grants: Vec::new(),
        }],
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ResponderPhase {
    Sweeping,
    AwaitAck { deadline: u64, sector: usize },
    Locked { sector: usize, announce_tx: u64, sent: bool },
    Reported,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ResponderState {
    pub id: NodeId,
    mode: BeamformingMode,
    n_rx: usize,
    t0: u64,
    spacing: u64,
    ack_window_us: u64,
    sp_end: u64,
    initiator: Option<NodeId>,
    probes: Vec<Probe>,
    sweep_end: Option<u64>,
    phase: ResponderPhase,
    pub trained: Option<TrainedLink>,
}

impl ResponderState {
    pub fn new(id: NodeId, mode: BeamformingMode, n_rx: usize, timing: &BfTiming, sp: &ExtendedScheduleEntry) -> Self {
        ResponderState {
            id,
            mode,
            n_rx: n_rx.max(1),
            t0: sp.start_us,
            spacing: timing.ssw_spacing_us,
            ack_window_us: timing.feedback_slot_us - timing.ack_delay_us,
            sp_end: sp.start_us + sp.duration_us,
            initiator: None,
            probes: Vec::new(),
            sweep_end: None,
            phase: ResponderPhase::Sweeping,
            trained: None,
        }
    }

    /// Receive sector used during the sweep at time `t`.
    pub fn sweep_sector(&self, t: u64) -> usize {
        ((t.saturating_sub(self.t0) / self.spacing) as usize) % self.n_rx
    }

    pub fn listening_sector(&self, t: u64) -> Option<usize> {
        match self.phase {
            ResponderPhase::Sweeping if t >= self.t0 => Some(self.sweep_sector(t)),
            ResponderPhase::AwaitAck { sector, .. } => Some(sector),
            ResponderPhase::Locked { sector, sent: false, .. } => Some(sector),
            _ => None,
        }
    }

    /// Receive sector of the best probe so far.
    pub fn best_sector(&self) -> Option<usize> {
        best_probe(&self.probes).map(|p| p.rx_sector)
    }

    pub fn next_wakeup(&self) -> Option<Wakeup> {
        match self.phase {
            ResponderPhase::Sweeping => match self.mode {
                BeamformingMode::Measurement => self.sweep_end.map(Wakeup::Tick),
                _ => best_probe(&self.probes).and_then(|p| p.feedback_at).map(Wakeup::Tick),
            },
            ResponderPhase::AwaitAck { deadline, .. } => Some(Wakeup::Timeout(deadline)),
            ResponderPhase::Locked { announce_tx, sent: false, .. } => Some(Wakeup::Tick(announce_tx)),
            _ => None,
        }
    }

    pub fn step(&mut self, event: BfEvent) -> Result<Vec<BfAction>> {
        let now = event.now();
        if now > self.sp_end {
            return Err(Error::Protocol(format!(
                "responder {} event at {now}us outside the SP ending at {}us",
                self.id, self.sp_end
            )));
        }
        match event {
            BfEvent::FrameReceived { tx_start, frame, snr_db, rx_sector, .. } => {
                Ok(self.on_frame(tx_start, frame, snr_db, rx_sector))
            }
            BfEvent::SlotTick { .. } | BfEvent::Timeout { .. } => Ok(self.on_tick(now)),
        }
    }

    fn on_tick(&mut self, now: u64) -> Vec<BfAction> {
        match self.phase {
            ResponderPhase::Sweeping if self.mode == BeamformingMode::Measurement => {
                if self.sweep_end.is_some_and(|e| now >= e) {
                    self.phase = ResponderPhase::Reported;
                    return vec![BfAction::StopListening, BfAction::Report(self.report())];
                }
                Vec::new()
            }
            ResponderPhase::Sweeping => {
                let Some(best) = best_probe(&self.probes) else {
                    return Vec::new();
                };
                let (Some(fb_at), Some(ack_at)) = (best.feedback_at, best.ack_at) else {
                    return Vec::new();
                };
                if now < fb_at {
                    return Vec::new();
                }
                self.phase = ResponderPhase::AwaitAck { deadline: ack_at + self.ack_window_us, sector: best.rx_sector };
                let frame = TddSswFeedbackFrame {
                    responder_id: self.id.clone(),
                    responder_sector_index: best.rx_sector,
                    echoed_tx_sector_index: best.tx_sector,
                };
                vec![
                    BfAction::Transmit {
                        frame: TddFrame::TddSswFeedback(frame),
                        sector: best.rx_sector,
                        to: self.initiator.clone(),
                    },
                    BfAction::Listen { sector: best.rx_sector },
                ]
            }
            ResponderPhase::AwaitAck { .. } => {
                // retried in a later beamforming SP
                self.phase = ResponderPhase::Failed;
                vec![
                    BfAction::StopListening,
                    BfAction::Dropped { reason: format!("{}: no SSW Ack before timeout", self.id) },
                ]
            }
            ResponderPhase::Locked { sector, announce_tx, sent: false } if now >= announce_tx => {
                self.phase = ResponderPhase::Locked { sector, announce_tx, sent: true };
                let to = self.initiator.clone().unwrap_or_default();
                vec![
                    BfAction::StopListening,
                    BfAction::Transmit {
                        frame: TddFrame::Announce(stub_announce(&self.id, &to)),
                        sector,
                        to: Some(to),
                    },
                ]
            }
            _ => Vec::new(),
        }
    }

    fn on_frame(&mut self, tx_start: u64, frame: TddFrame, snr_db: f64, rx_sector: usize) -> Vec<BfAction> {
        match (&self.phase, frame) {
            (ResponderPhase::Sweeping, TddFrame::TddSsw(ssw)) => {
                if self.initiator.as_ref().is_some_and(|i| *i != ssw.initiator) {
                    return vec![BfAction::Dropped { reason: format!("SSW from second initiator {}", ssw.initiator) }];
                }
                self.initiator = Some(ssw.initiator.clone());
                let (feedback_at, ack_at) = if self.mode == BeamformingMode::Measurement {
                    if let Some(c) = ssw.slot_countdown {
                        self.sweep_end = Some(tx_start + (c as u64 + 1) * self.spacing);
                    }
                    (None, None)
                } else {
                    match (ssw.feedback_offset_us.get(&self.id), ssw.ack_offset_us.get(&self.id)) {
                        (Some(f), Some(a)) => (Some(tx_start + f), Some(tx_start + a)),
                        _ => return vec![BfAction::Dropped { reason: format!("SSW without offsets for {}", self.id) }],
                    }
                };
                self.probes.push(Probe { tx_sector: ssw.tx_sector_index, rx_sector, snr_db, feedback_at, ack_at });
                Vec::new()
            }
            (&ResponderPhase::AwaitAck { sector, .. }, TddFrame::TddSswAck(ack)) if ack.responder_id == self.id => {
                if !ack.end_of_training {
                    return Vec::new();
                }
                let link = TrainedLink {
                    initiator_id: self.initiator.clone().unwrap_or_default(),
                    responder_id: self.id.clone(),
                    initiator_sector: ack.initiator_tx_sector,
                    responder_sector: sector,
                    snr_db: ack.measured_snr_db,
                };
                self.trained = Some(link.clone());
                self.phase =
                    ResponderPhase::Locked { sector, announce_tx: tx_start + ack.announce_offsets_us.1, sent: false };
                vec![BfAction::Trained(link)]
            }
            (ResponderPhase::Locked { .. }, TddFrame::Announce(_)) => Vec::new(),
            (_, other) => vec![BfAction::Dropped { reason: format!("{:?} ignored by {}", other.kind(), self.id) }],
        }
    }

    fn report(&self) -> BeamMeasurementReport {
        let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for p in &self.probes {
            best.entry((p.tx_sector, p.rx_sector)).and_modify(|s| *s = s.max(p.snr_db)).or_insert(p.snr_db);
        }
        BeamMeasurementReport {
            responder_id: self.id.clone(),
            initiator_id: self.initiator.clone().unwrap_or_default(),
            samples: best
                .into_iter()
                .map(|((i, r), snr_db)| MeasurementSample { initiator_sector: i, responder_sector: r, snr_db })
                .collect(),
        }
    }
}

/// Radio and MAC parameters shared by a beamforming run.
#[derive(Debug, Clone, Copy)]
pub struct BfEnv<'a> {
    pub link: &'a LinkBudgetConfig,
    pub mcs: &'a McsTable,
    pub timing: BfTiming,
    pub sizes: FrameSizes,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BfOutcome {
    pub links: Vec<TrainedLink>,
    pub reports: Vec<BeamMeasurementReport>,
    /// Responders that finished without a trained link or a report.
    pub untrained: Vec<NodeId>,
    pub ssw_count: usize,
    pub end_us: u64,
}

struct Tx {
    src: usize,
    sector: usize,
    start: u64,
    end: u64,
    frame: TddFrame,
    to: Option<NodeId>,
}

struct Rx {
    tx: usize,
    dst: usize,
    sector: usize,
    at: u64,
    snr_db: f64,
}

/// Time from the SP start until the initiator's last scheduled activity.
pub fn beamforming_duration_us(
    mode: BeamformingMode,
    n_tx: usize,
    n_responders: usize,
    reps: usize,
    timing: &BfTiming,
) -> u64 {
    let sweep = (n_tx * reps) as u64 * timing.ssw_spacing_us;
    if mode == BeamformingMode::Measurement {
        return sweep;
    }
    sweep + (n_tx * n_responders) as u64 * timing.feedback_slot_us + 2 * n_responders as u64 * timing.announce_slot_us
}

/// Run one beamforming exchange inside `sp` over the deterministic channel.
pub fn run_beamforming(
    mode: BeamformingMode,
    initiator: &NodeModel,
    responders: &[&NodeModel],
    env: &BfEnv,
    sp: &ExtendedScheduleEntry,
    trace: &mut Trace,
) -> Result<BfOutcome> {
    env.timing.validate()?;
    if responders.is_empty() {
        return Err(Error::invalid("beamforming needs at least one responder"));
    }
    if mode == BeamformingMode::Individual && responders.len() != 1 {
        return Err(Error::invalid("individual beamforming takes exactly one responder"));
    }
    let mut seen = BTreeSet::new();
    for r in responders {
        if r.id == initiator.id || !seen.insert(&r.id) {
            return Err(Error::invalid(format!("duplicate or self responder {}", r.id)));
        }
    }
    let reps = env.timing.repetitions.unwrap_or_else(|| responders.iter().map(|r| r.codebook.len()).max().unwrap_or(1));
    let n_tx = initiator.codebook.len();
    let needed = beamforming_duration_us(mode, n_tx, responders.len(), reps, &env.timing);
    if needed > sp.duration_us {
        return Err(Error::invalid(format!("beamforming needs {needed}us but the SP lasts {}us", sp.duration_us)));
    }

    let nodes: Vec<&NodeModel> = std::iter::once(initiator).chain(responders.iter().copied()).collect();
    let nodes = nodes.as_slice();
    let ids: Vec<NodeId> = responders.iter().map(|r| r.id.clone()).collect();
    let mut init = InitiatorState::new(initiator.id.clone(), mode, n_tx, ids, reps, env.timing, sp);
    let mut resp: Vec<ResponderState> =
        responders.iter().map(|r| ResponderState::new(r.id.clone(), mode, r.codebook.len(), &env.timing, sp)).collect();

    let rate = env.mcs.lowest().phy_rate_bps;
    let threshold = env.mcs.decode_threshold_db();
    let limit = env.link.interference_limit_dbm();
    let mut out = BfOutcome::default();
    let mut txs: Vec<Tx> = Vec::new();
    let mut pending: Vec<Rx> = Vec::new();

    loop {
        let wakes = std::iter::once(init.next_wakeup()).chain(resp.iter().map(|r| r.next_wakeup()));
        let next_wake = wakes.flatten().map(Wakeup::at).min();
        let next_rx = pending.iter().map(|r| r.at).min();
        let Some(now) = next_wake.into_iter().chain(next_rx).min() else {
            break;
        };
        out.end_us = out.end_us.max(now);
        let mut starting: Vec<(usize, usize, TddFrame, Option<NodeId>)> = Vec::new();

        let (due, rest): (Vec<Rx>, Vec<Rx>) = pending.into_iter().partition(|r| r.at == now);
        pending = rest;
        for r in due {
            let tx = &txs[r.tx];
            let dst = nodes[r.dst];
            let mut outcome = "ok";
            if r.snr_db < threshold {
                outcome = "below_threshold";
            } else if txs.iter().any(|y| y.src == r.dst && y.start < tx.end + 1 && y.end > tx.start) {
                outcome = "half_duplex";
            } else {
                for (i, y) in txs.iter().enumerate() {
                    if i == r.tx || y.src == r.dst || y.start >= tx.end || y.end <= tx.start {
                        continue;
                    }
                    if received_power_dbm(nodes[y.src], y.sector, dst, r.sector, env.link)? > limit {
                        outcome = "collision";
                        break;
                    }
                }
            }
            trace.push(
                now,
                TraceKind::FrameRxComplete,
                Some(&dst.id),
                None,
                Some(trace_frame(tx, nodes, Some(r.sector), Some(r.snr_db))),
                Some(outcome.to_string()),
            );
            if outcome != "ok" {
                continue;
            }
            let ev = BfEvent::FrameReceived {
                now,
                tx_start: tx.start,
                frame: tx.frame.clone(),
                snr_db: r.snr_db,
                rx_sector: r.sector,
            };
            let actions = if r.dst == 0 { init.step(ev)? } else { resp[r.dst - 1].step(ev)? };
            apply(now, r.dst, actions, nodes, &mut out, &mut starting, trace);
        }

        // step every machine due now until all are past `now`
        for _ in 0..64 {
            let mut progressed = false;
            if let Some(w) = init.next_wakeup().filter(|w| w.at() <= now) {
                let actions = init.step(wake_event(w, now))?;
                apply(now, 0, actions, nodes, &mut out, &mut starting, trace);
                progressed = true;
            }
            for (k, r) in resp.iter_mut().enumerate() {
                if let Some(w) = r.next_wakeup().filter(|w| w.at() <= now) {
                    let actions = r.step(wake_event(w, now))?;
                    apply(now, k + 1, actions, nodes, &mut out, &mut starting, trace);
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }

        for (src, sector, frame, to) in starting {
            let bits = env.sizes.control_bits(frame.kind());
            let end = now + airtime_us(bits, rate);
            txs.push(Tx { src, sector, start: now, end, frame, to });
            let idx = txs.len() - 1;
            let tx = &txs[idx];
            trace.push(
                now,
                TraceKind::FrameTxStart,
                Some(&nodes[src].id),
                None,
                Some(trace_frame(tx, nodes, None, None)),
                None,
            );
            for (dst, node) in nodes.iter().enumerate() {
                if dst == src || tx.to.as_ref().is_some_and(|t| *t != node.id) {
                    continue;
                }
                let listening = if dst == 0 { init.listening_sector() } else { resp[dst - 1].listening_sector(now) };
                let Some(rs) = listening else { continue };
                let sample = link_snr_db(nodes[src], sector, node, rs, env.link)?;
                let prop = propagation_delay_us(nodes[src].position.distance_to(&node.position));
                pending.push(Rx { tx: idx, dst, sector: rs, at: end + prop, snr_db: sample.snr_db });
            }
        }
    }

    out.ssw_count = init.ssw_sent;
    for r in &resp {
        let reported = out.reports.iter().any(|rep| rep.responder_id == r.id);
        if r.trained.is_none() && !reported {
            out.untrained.push(r.id.clone());
        }
    }
    Ok(out)
}

fn wake_event(w: Wakeup, now: u64) -> BfEvent {
    match w {
        Wakeup::Tick(_) => BfEvent::SlotTick { now },
        Wakeup::Timeout(_) => BfEvent::Timeout { now },
    }
}

fn trace_frame(tx: &Tx, nodes: &[&NodeModel], rx_sector: Option<usize>, snr_db: Option<f64>) -> TraceFrame {
    TraceFrame {
        kind: tx.frame.kind(),
        src: nodes[tx.src].id.clone(),
        dst: tx.to.clone(),
        tx_sector: Some(tx.sector),
        rx_sector,
        start_us: tx.start,
        end_us: tx.end,
        snr_db,
        body: tx.frame.clone(),
    }
}

fn apply(
    now: u64,
    node: usize,
    actions: Vec<BfAction>,
    nodes: &[&NodeModel],
    out: &mut BfOutcome,
    starting: &mut Vec<(usize, usize, TddFrame, Option<NodeId>)>,
    trace: &mut Trace,
) {
    let id = &nodes[node].id;
    for a in actions {
        match a {
            BfAction::Transmit { frame, sector, to } => starting.push((node, sector, frame, to)),
            BfAction::Listen { .. } | BfAction::StopListening => {}
            BfAction::Report(rep) => {
                let text = serde_json::to_string(&rep).unwrap_or_default();
                trace.note(now, TraceKind::ControllerReport, Some(id), text);
                out.reports.push(rep);
            }
            BfAction::Trained(link) => {
                trace.note(now, TraceKind::Timer, Some(id), format!("trained sector {}", link.responder_sector));
                out.links.push(link);
            }
            BfAction::Dropped { reason } => trace.note(now, TraceKind::FrameDropped, Some(id), reason),
        }
    }
}
