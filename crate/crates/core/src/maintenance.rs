//! Link management carried over Announce frames: Heartbeat, Keep Alive and
//! bandwidth-request elements, TDD synchronization quality, unsolicited
//! periodic link measurement and transmit power control.

use serde::{Deserialize, Serialize};

use crate::channel::LinkSample;
use crate::domain::NodeId;
use crate::error::{Error, Result};
use crate::schedule::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockQuality {
    GlobalSync,
    Holdover,
    Unsynced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockModel {
    /// Signed offset against global time.
    pub offset_us: f64,
    pub drift_ppm: f64,
    pub quality: ClockQuality,
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel { offset_us: 0.0, drift_ppm: 0.0, quality: ClockQuality::GlobalSync }
    }
}

pub const DEFAULT_SYNC_TOLERANCE_US: f64 = 1.0;

/// Free-runs the clock for `dt_us`. A synchronized clock whose offset
/// leaves the tolerance drops to holdover.
pub fn advance_clock(clock: ClockModel, dt_us: u64, sync_tolerance_us: f64) -> ClockModel {
    let offset_us = clock.offset_us + clock.drift_ppm * dt_us as f64 / 1e6;
    let quality = match clock.quality {
        ClockQuality::GlobalSync if offset_us.abs() > sync_tolerance_us => ClockQuality::Holdover,
        q => q,
    };
    ClockModel { offset_us, quality, ..clock }
}

/// Time-sync stub: snaps the clock back onto global time.
pub fn resync_clock(clock: ClockModel) -> ClockModel {
    ClockModel { offset_us: 0.0, quality: ClockQuality::GlobalSync, ..clock }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotGrant {
    pub slot_index: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TpcFields {
    /// Transmit power per chain, dBm. One chain is modeled; extra entries
    /// are echoed unchanged.
    pub tx_power_dbm: Vec<f64>,
    pub link_margin_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainParams {
    pub chain: u8,
    pub rsni_db: f64,
}

/// Extended DMG Link Margin fields. The PHY counters are not modeled and
/// stay zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkMarginFields {
    pub per_chain: Vec<ChainParams>,
    pub tpc: TpcFields,
    pub ppdus: u64,
    pub ldpc_codewords: u64,
    pub sc_blocks: u64,
    pub ofdm_symbols: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "element", rename_all = "snake_case")]
pub enum MaintenanceElement {
    Heartbeat { updated_params: Vec<(String, String)>, tx_rx_slot_grants: Vec<SlotGrant> },
    KeepAlive { period_us: u64, negotiated_rx_slots: Vec<usize> },
    TddBandwidthRequest { queue_size_bytes: u64, arrival_rate_bps: f64, traffic_id: u8 },
    DmgLinkMargin(LinkMarginFields),
    TddSynchronization { clock_quality: ClockQuality, accuracy_us: f64 },
    PeriodicReportRequest(PeriodicReportRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnounceFrame {
    pub sender: NodeId,
    /// `None` is broadcast.
    pub receiver: Option<NodeId>,
    pub needs_ack: bool,
    pub encrypted: bool,
    pub elements: Vec<MaintenanceElement>,
}

pub fn build_announce(
    sender: NodeId,
    receiver: Option<NodeId>,
    elements: Vec<MaintenanceElement>,
    needs_ack: bool,
) -> Result<AnnounceFrame> {
    if elements.is_empty() {
        return Err(Error::invalid("Announce frame needs at least one element"));
    }
    if receiver.is_none() && needs_ack {
        return Err(Error::invalid("broadcast Announce cannot require acknowledgement"));
    }
    for e in &elements {
        if let MaintenanceElement::PeriodicReportRequest(r) = e {
            r.validate()?;
        }
    }
    Ok(AnnounceFrame { sender, receiver, needs_ack, encrypted: false, elements })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicReportRequest {
    pub start_time_us: u64,
    pub interval_us: u64,
    pub count: u32,
}

impl PeriodicReportRequest {
    pub fn validate(&self) -> Result<()> {
        if self.interval_us == 0 {
            return Err(Error::invalid("periodic report interval must be positive"));
        }
        if self.count == 0 {
            return Err(Error::invalid("periodic report count must be at least 1"));
        }
        Ok(())
    }

    pub fn nominal_times(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.count as u64).map(move |k| self.start_time_us + k * self.interval_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledReport {
    pub nominal_us: u64,
    /// Start of the responder's transmit slot carrying the report.
    pub slot_start_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum ReportDecision {
    Accept { schedule: Vec<ScheduledReport> },
    Reject { nominal_us: u64 },
}

/// Accepts when every nominal report time `t` has a responder transmit
/// slot starting in `[t, t + max_shift_us)`. `next_tx_slot(t)` returns the
/// start of the responder's earliest transmit slot towards the requester
/// starting at or after `t`.
pub fn handle_periodic_report_request(
    next_tx_slot: impl Fn(u64) -> Option<u64>,
    req: &PeriodicReportRequest,
    max_shift_us: u64,
) -> ReportDecision {
    let mut schedule = Vec::with_capacity(req.count as usize);
    for t in req.nominal_times() {
        match next_tx_slot(t) {
            Some(s) if s >= t && s - t < max_shift_us => {
                schedule.push(ScheduledReport { nominal_us: t, slot_start_us: s })
            }
            _ => return ReportDecision::Reject { nominal_us: t },
        }
    }
    ReportDecision::Accept { schedule }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMeasurementReport {
    /// Transmitter of the measured link.
    pub peer: NodeId,
    pub reporter: NodeId,
    pub rcpi_dbm: f64,
    pub rsni_db: f64,
    pub tpc: TpcFields,
    pub sequence_number: u32,
}

/// What the reporter knows about the measured link.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredLink {
    pub peer: NodeId,
    pub reporter: NodeId,
    pub trained: bool,
}

pub fn emit_link_measurement_report(
    link: &MeasuredLink,
    sample: &LinkSample,
    sequence_number: u32,
    tpc: TpcFields,
) -> Result<LinkMeasurementReport> {
    if !link.trained {
        return Err(Error::Protocol(format!(
            "link {} -> {} is not trained; no measurement report",
            link.peer, link.reporter
        )));
    }
    Ok(LinkMeasurementReport {
        peer: link.peer.clone(),
        reporter: link.reporter.clone(),
        rcpi_dbm: sample.rcpi_dbm,
        rsni_db: sample.rsni_db,
        tpc,
        sequence_number,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Alive,
    Dead,
}

/// Dead only when strictly more than `timeout_us` has passed.
pub fn keepalive_check(last_rx_us: u64, now_us: u64, timeout_us: u64) -> Liveness {
    if now_us.saturating_sub(last_rx_us) > timeout_us {
        Liveness::Dead
    } else {
        Liveness::Alive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpcLimits {
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub max_step_db: f64,
}

/// Proportional closed-loop step towards the target RSNI, at most
/// `max_step_db` per update and clamped to the power limits.
pub fn tpc_update(current_dbm: f64, measured_rsni_db: f64, target_rsni_db: f64, limits: &TpcLimits) -> f64 {
    let step = (target_rsni_db - measured_rsni_db).clamp(-limits.max_step_db, limits.max_step_db);
    (current_dbm + step).clamp(limits.min_dbm, limits.max_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn announce_rules() {
        let hb = MaintenanceElement::Heartbeat { updated_params: vec![], tx_rx_slot_grants: vec![] };
        let f = build_announce("ap".into(), None, vec![hb], false).unwrap();
        assert!(f.receiver.is_none() && !f.needs_ack);

        let bw = MaintenanceElement::TddBandwidthRequest {
            queue_size_bytes: 1_000_000,
            arrival_rate_bps: 2e9,
            traffic_id: 3,
        };
        assert!(build_announce("sta".into(), Some("ap".into()), vec![bw.clone()], true).is_ok());
        assert!(matches!(
            build_announce("sta".into(), Some("ap".into()), vec![], true),
            Err(Error::InvalidArgument(_))
        ));
        assert!(build_announce("ap".into(), None, vec![bw], true).is_err());
        let bad = MaintenanceElement::PeriodicReportRequest(PeriodicReportRequest {
            start_time_us: 0,
            interval_us: 0,
            count: 1,
        });
        assert!(build_announce("ap".into(), Some("sta".into()), vec![bad], true).is_err());
    }

    #[test]
    fn periodic_request_accept_and_reject() {
        let req = PeriodicReportRequest { start_time_us: 10_000, interval_us: 100_000, count: 3 };
        // transmit slot every 1.6 ms at offset 0
        let every_interval = |t: u64| Some(t.div_ceil(1600) * 1600);
        match handle_periodic_report_request(every_interval, &req, 1600) {
            ReportDecision::Accept { schedule } => {
                let nominal: Vec<u64> = schedule.iter().map(|s| s.nominal_us).collect();
                assert_eq!(nominal, vec![10_000, 110_000, 210_000]);
                let slots: Vec<u64> = schedule.iter().map(|s| s.slot_start_us).collect();
                assert_eq!(slots, vec![11_200, 110_400, 211_200]);
            }
            other => panic!("{other:?}"),
        }

        let single = PeriodicReportRequest { count: 1, ..req };
        match handle_periodic_report_request(Some, &single, 1) {
            ReportDecision::Accept { schedule } => {
                assert_eq!(schedule, vec![ScheduledReport { nominal_us: 10_000, slot_start_us: 10_000 }])
            }
            other => panic!("{other:?}"),
        }

        assert_eq!(handle_periodic_report_request(|_| None, &req, 1600), ReportDecision::Reject { nominal_us: 10_000 });
        // only slots in the first 100 ms
        let early = |t: u64| (t < 100_000).then(|| t.div_ceil(1600) * 1600);
        assert_eq!(handle_periodic_report_request(early, &req, 1600), ReportDecision::Reject { nominal_us: 110_000 });
    }

    fn sample(snr: f64) -> LinkSample {
        LinkSample {
            tx_node: "ap".into(),
            rx_node: "sta".into(),
            tx_sector: 0,
            rx_sector: 0,
            snr_db: snr,
            rcpi_dbm: snr - 70.66,
            rsni_db: snr,
        }
    }

    #[test]
    fn measurement_report() {
        let link = MeasuredLink { peer: "ap".into(), reporter: "sta".into(), trained: true };
        let r1 = emit_link_measurement_report(&link, &sample(22.7), 7, TpcFields::default()).unwrap();
        let r2 = emit_link_measurement_report(&link, &sample(22.7), 8, TpcFields::default()).unwrap();
        assert_eq!(r1.rsni_db, 22.7);
        assert!((r1.rcpi_dbm - -47.96).abs() < 0.2);
        assert_eq!(r2.sequence_number, r1.sequence_number + 1);
        assert_eq!((r1.rcpi_dbm, r1.rsni_db), (r2.rcpi_dbm, r2.rsni_db));

        let untrained = MeasuredLink { trained: false, ..link };
        assert!(matches!(
            emit_link_measurement_report(&untrained, &sample(1.0), 0, TpcFields::default()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn keepalive_boundary() {
        assert_eq!(keepalive_check(0, 1_200_000, 1_000_000), Liveness::Dead);
        assert_eq!(keepalive_check(0, 1_000_000, 1_000_000), Liveness::Alive);
        assert_eq!(keepalive_check(5, 5, 1), Liveness::Alive);
    }

    const LIM: TpcLimits = TpcLimits { min_dbm: 0.0, max_dbm: 20.0, max_step_db: 3.0 };

    #[test]
    fn tpc_examples() {
        assert_eq!(tpc_update(10.0, 26.0, 20.0, &LIM), 7.0);
        assert_eq!(tpc_update(10.0, 20.0, 20.0, &LIM), 10.0);
        assert_eq!(tpc_update(0.0, 25.0, 20.0, &LIM), 0.0);
        assert_eq!(tpc_update(19.0, 10.0, 20.0, &LIM), 20.0);
    }

    #[test]
    fn clock_examples() {
        let c = ClockModel { drift_ppm: 10.0, ..Default::default() };
        let c1 = advance_clock(c, 1_000_000, 100.0);
        assert!((c1.offset_us - 10.0).abs() < 1e-12);
        assert_eq!(c1.quality, ClockQuality::GlobalSync);

        let still = advance_clock(ClockModel::default(), 5_000_000, 1.0);
        assert_eq!(still, ClockModel::default());

        let crossed = advance_clock(c, 200_000, 1.0);
        assert_eq!(crossed.quality, ClockQuality::Holdover);
        assert_eq!(resync_clock(crossed).quality, ClockQuality::GlobalSync);

        let free = ClockModel { quality: ClockQuality::Unsynced, ..c };
        assert_eq!(advance_clock(free, 1_000_000, 1.0).quality, ClockQuality::Unsynced);
    }

    proptest! {
        #[test]
        fn tpc_stays_in_limits(cur in 0.0f64..20.0, measured in -20.0f64..60.0, target in -20.0f64..60.0) {
            let p = tpc_update(cur, measured, target, &LIM);
            prop_assert!((LIM.min_dbm..=LIM.max_dbm).contains(&p));
            prop_assert!((p - cur).abs() <= LIM.max_step_db + 1e-12);
        }

        #[test]
        fn tpc_converges_on_static_link(err in -30.0f64..30.0, step in 0.5f64..6.0) {
            // rsni follows tx power one-for-one on a static link
            let lim = TpcLimits { min_dbm: -100.0, max_dbm: 100.0, max_step_db: step };
            let target = 20.0;
            let rsni_at_0dbm = target + err;
            let mut p = 0.0;
            let mut errors = vec![err];
            let bound = (err.abs() / step).ceil() as usize + 1;
            for _ in 0..bound {
                p = tpc_update(p, p + rsni_at_0dbm, target, &lim);
                errors.push(p + rsni_at_0dbm - target);
            }
            prop_assert!(errors.last().unwrap().abs() < step);
            for w in errors.windows(2) {
                prop_assert!(w[1].abs() <= w[0].abs() + 1e-9);
                // no overshoot past the target by more than one step
                if w[0].signum() != w[1].signum() && w[1] != 0.0 {
                    prop_assert!(w[1].abs() <= step + 1e-9);
                }
            }
        }

        #[test]
        fn clock_offset_non_decreasing(drift in -50.0f64..50.0, steps in proptest::collection::vec(0u64..1_000_000, 1..20)) {
            let mut c = ClockModel { drift_ppm: drift, ..Default::default() };
            let mut last = 0.0;
            for dt in steps {
                c = advance_clock(c, dt, 1.0);
                prop_assert!(c.offset_us.abs() >= last);
                last = c.offset_us.abs();
            }
        }
    }
}
