//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tddsim::beamforming::{run_beamforming, BeamformingMode, BfEnv, BfTiming, TrainedLink};
use tddsim::channel::{link_snr_db, propagation_delay_us, LinkBudgetConfig};
use tddsim::config::{load_config, ScenarioConfig};
use tddsim::controller::{assign_slots, build_interference_graph, verify_global, ControllerConfig, DemandSpec};
use tddsim::domain::{Codebook, McsTable, NodeId, NodeModel, Position, PowerLimits, Role, REQUIREMENTS};
use tddsim::frame::{airtime_us, FrameKind, FrameSizes};
use tddsim::maintenance::{tpc_update, TpcLimits};
use tddsim::scenario::{run_scenario, ScenarioOutput};
use tddsim::schedule::{
    expand_sp, AbsoluteSlot, BeaconLayout, Direction, SlotCategory, TddSlotSchedule, TddSlotStructure,
};
use tddsim::trace::{Trace, TraceKind, TraceRecord};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture(name: &str) -> ScenarioConfig {
    load_config(&fixtures_dir().join(format!("{name}.toml"))).expect("fixture loads")
}

fn run(cfg: &ScenarioConfig) -> Result<ScenarioOutput, String> {
    run_scenario(cfg).map_err(|e| e.to_string())
}

const LIM: PowerLimits = PowerLimits { min_dbm: -10.0, max_dbm: 30.0 };

fn node(id: &str, role: Role, x: f64, y: f64, sectors: usize, boresight: f64) -> NodeModel {
    let cb = Codebook::uniform(sectors, boresight, 24.0, -20.0).unwrap();
    NodeModel::new(id, role, Position::new(x, y), cb, 10.0, LIM).unwrap()
}

/// Exhaustive argmax over sector pairs; ties go to the lowest (tx, rx).
fn best_pair(a: &NodeModel, b: &NodeModel, cfg: &LinkBudgetConfig) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..a.codebook.len() {
        for j in 0..b.codebook.len() {
            let s = link_snr_db(a, i, b, j, cfg).unwrap().snr_db;
            if s > best.2 {
                best = (i, j, s);
            }
        }
    }
    best
}

fn trained(a: &NodeModel, b: &NodeModel, cfg: &LinkBudgetConfig) -> TrainedLink {
    let (i, j, snr_db) = best_pair(a, b, cfg);
    TrainedLink {
        initiator_id: a.id.clone(),
        responder_id: b.id.clone(),
        initiator_sector: i,
        responder_sector: j,
        snr_db,
    }
}

/// Expanded slots of `ap` over SP instances `sps`.
fn ap_slots(out: &ScenarioOutput, cfg: &ScenarioConfig, ap: &str, sps: Range<u64>) -> Vec<AbsoluteSlot> {
    let a = &out.plan.schedule.aps[&NodeId::from(ap)];
    sps.flat_map(|n| expand_sp(&cfg.beacon.sp_entry(a.structure.allocation_id, n), &a.structure, &a.schedule).unwrap())
        .collect()
}

fn data_start(out: &ScenarioOutput, cfg: &ScenarioConfig) -> u64 {
    cfg.beacon.sp_start_us(out.training.sps_used())
}

fn frames(trace: &Trace, kind: TraceKind, fk: FrameKind) -> impl Iterator<Item = &TraceRecord> {
    trace.records().iter().filter(move |r| r.kind == kind && r.frame.as_ref().is_some_and(|f| f.kind == fk))
}

fn c1_timescales() -> Outcome {
    let t = Instant::now();
    let layout = BeaconLayout::default();
    let s = TddSlotStructure::default_layout(1);
    ensure!(layout.beacon_interval_us == 300_000 && layout.sp_duration_us == 25_600, "layout {layout:?}");
    ensure!(s.interval_duration_us == 1_600 && s.slots.iter().all(|x| x.duration_us == 66), "structure");
    let slots =
        expand_sp(&layout.sp_entry(1, 0), &s, &TddSlotSchedule::new(1, "ap".into())).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let intervals: BTreeSet<usize> = slots.iter().map(|x| x.interval_index).collect();
    ensure!(slots.len() == 384, "{} slots", slots.len());
    ensure!(intervals.len() == 16, "{} intervals", intervals.len());
    ensure!(slots.windows(2).all(|w| w[0].end_us() <= w[1].start_us), "slots overlap or are unordered");
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!("16 x 24 = {} slots in {:.3} ms", slots.len(), elapsed.as_secs_f64() * 1e3))
}

fn c2_beamforming_oracle() -> Outcome {
    let t = Instant::now();
    let cfg = LinkBudgetConfig::default();
    let mcs = McsTable::default();
    let env = BfEnv { link: &cfg, mcs: &mcs, timing: BfTiming::default(), sizes: FrameSizes::default() };
    let entry = BeaconLayout::default().sp_entry(1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    let (mut cases, mut hits) = (0, 0);
    while cases < 120 {
        let (na, nb) = (rng.random_range(4..=16), rng.random_range(4..=16));
        let d: f64 = rng.random_range(10.0..250.0);
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let a = node("i", Role::DnAp, 0.0, 0.0, na, rng.random_range(0.0..360.0));
        let b = node("r", Role::CnSta, d * th.cos(), d * th.sin(), nb, rng.random_range(0.0..360.0));
        let oracle = best_pair(&a, &b, &cfg);
        if oracle.2 < mcs.decode_threshold_db() {
            continue;
        }
        cases += 1;
        let out = run_beamforming(BeamformingMode::Individual, &a, &[&b], &env, &entry, &mut Trace::disabled())
            .map_err(|e| e.to_string())?;
        if let [l] = out.links.as_slice() {
            if (l.initiator_sector, l.responder_sector) == (oracle.0, oracle.1) {
                hits += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    ensure!(hits == cases, "{hits}/{cases} match the brute-force argmax");
    ensure!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    Ok(format!("{hits}/{cases} geometries match, {:.2} s", elapsed.as_secs_f64()))
}

fn c3_group_beamforming() -> Outcome {
    let cfg = LinkBudgetConfig::default();
    let mcs = McsTable::default();
    let env = BfEnv { link: &cfg, mcs: &mcs, timing: BfTiming::default(), sizes: FrameSizes::default() };
    let entry = BeaconLayout::default().sp_entry(1, 0);
    let init = node("ap", Role::DnAp, 0.0, 0.0, 16, 0.0);
    let resp = [
        node("r1", Role::CnSta, 80.0, 10.0, 12, 5.0),
        node("r2", Role::CnSta, -50.0, 90.0, 12, 0.0),
        node("r3", Role::CnSta, 30.0, -120.0, 8, 20.0),
    ];
    let refs: Vec<&NodeModel> = resp.iter().collect();

    let mut trace = Trace::new();
    let out =
        run_beamforming(BeamformingMode::Group, &init, &refs, &env, &entry, &mut trace).map_err(|e| e.to_string())?;
    let decoders: BTreeSet<NodeId> = frames(&trace, TraceKind::FrameRxComplete, FrameKind::TddSsw)
        .filter(|r| r.outcome.as_deref() == Some("ok"))
        .filter_map(|r| r.node.clone())
        .collect();
    ensure!(!decoders.is_empty(), "no responder decoded an SSW");
    for d in &decoders {
        ensure!(out.links.iter().any(|l| &l.responder_id == d), "{d} decoded an SSW but is untrained");
    }
    let mut fb: Vec<(u64, u64)> = frames(&trace, TraceKind::FrameTxStart, FrameKind::TddSswFeedback)
        .map(|r| (r.frame.as_ref().unwrap().start_us, r.frame.as_ref().unwrap().end_us))
        .collect();
    fb.sort();
    let overlaps = fb.windows(2).filter(|w| w[0].1 > w[1].0).count();
    ensure!(overlaps == 0, "{overlaps} overlapping feedback transmissions");

    let mut mtrace = Trace::new();
    let m = run_beamforming(BeamformingMode::Measurement, &init, &refs, &env, &entry, &mut mtrace)
        .map_err(|e| e.to_string())?;
    let ids: BTreeSet<NodeId> = resp.iter().map(|r| r.id.clone()).collect();
    let resp_tx = mtrace
        .records()
        .iter()
        .filter(|r| r.kind == TraceKind::FrameTxStart && r.node.as_ref().is_some_and(|n| ids.contains(n)))
        .count();
    let acks =
        mtrace.records().iter().filter(|r| r.frame.as_ref().is_some_and(|f| f.kind == FrameKind::TddSswAck)).count();
    ensure!(resp_tx == 0, "{resp_tx} responder transmissions in measurement mode");
    ensure!(acks == 0, "{acks} SSW Ack frames in measurement mode");
    ensure!(m.links.is_empty(), "measurement mode trained links");
    Ok(format!(
        "{}/{} decoding responders trained, {} feedback frames without overlap; measurement: 0 responder tx, 0 acks, {} reports",
        out.links.len(),
        decoders.len(),
        fb.len(),
        m.reports.len()
    ))
}

fn c4_delayed_ack() -> Outcome {
    let cfg = fixture("one_ap_two_sta");
    let out = run(&cfg)?;
    let t0 = data_start(&out, &cfg);
    let end = t0 + cfg.duration_us();
    let last_sp = cfg.beacon.sp_at_or_after(end) + 2;
    let slots = ap_slots(&out, &cfg, "ap", out.training.sps_used()..last_sp);
    let interval = cfg.slots.interval_us;

    let mut expected: BTreeSet<(NodeId, u64)> = BTreeSet::new();
    let mut max_delay = 0;
    for r in frames(&out.trace, TraceKind::FrameRxComplete, FrameKind::Data) {
        if r.outcome.as_deref() != Some("ok") {
            continue;
        }
        let rx = r.node.clone().unwrap();
        let s = slots
            .iter()
            .filter(|s| s.category == SlotCategory::Basic && s.transmitter() == Some(&rx) && s.start_us > r.t)
            .map(|s| s.start_us)
            .min()
            .ok_or("no BASIC slot after a reception")?;
        max_delay = max_delay.max(s - r.t);
        if s < end {
            expected.insert((rx, s));
        }
    }
    let actual: BTreeSet<(NodeId, u64)> = out
        .trace
        .records()
        .iter()
        .filter(|r| r.kind == TraceKind::FrameTxStart)
        .filter_map(|r| r.frame.as_ref())
        .filter(|f| f.kind.is_ack())
        .map(|f| (f.src.clone(), f.start_us))
        .collect();
    ensure!(!actual.is_empty(), "no acks sent");
    ensure!(actual == expected, "{} acks sent, {} expected; sets differ", actual.len(), expected.len());
    let measured = out.metrics.flows.iter().filter_map(|f| f.max_ack_delay_us()).max().unwrap_or(0);
    ensure!(max_delay <= interval && measured <= interval, "ack delay {measured} us exceeds one interval");
    Ok(format!("{} acks all at the earliest BASIC tx slot, max ack delay {measured} us <= {interval} us", actual.len()))
}

fn c5_throughput() -> Outcome {
    let cfg = fixture("single_dl_saturated");
    let out = run(&cfg)?;
    let f = &out.metrics.flows[0];
    let min_snr = f.snr_db.iter().copied().fold(f64::INFINITY, f64::min);
    ensure!(min_snr >= 18.0, "snr {min_snr:.2} dB below MCS 12");
    let g = &out.plan.schedule.grants[0];
    let template = cfg.slots.template();
    let frac = g.data_slots.iter().map(|&s| template.slots[s].duration_us).sum::<u64>() as f64
        / template.interval_duration_us as f64;
    let sizes = cfg.frame_sizes;
    let expected =
        frac * 4620e6 * sizes.data_payload_bytes as f64 / (sizes.data_payload_bytes + sizes.data_overhead_bytes) as f64;
    let measured = f.goodput_bps(out.metrics.duration_us);
    let err = (measured - expected).abs() / expected;
    ensure!(err <= 0.02, "goodput {measured:.4e} vs expected {expected:.4e} ({:.2}% off)", err * 100.0);
    ensure!(measured > REQUIREMENTS.min_dl_rate_bps, "goodput {measured:.4e} does not exceed 4 Gbps");
    Ok(format!(
        "f = {frac:.4}, goodput {:.4} Gbps vs {:.4} Gbps expected ({:.2}% off), > 4 Gbps",
        measured / 1e9,
        expected / 1e9,
        err * 100.0
    ))
}

/// Slot-wait oracle for constant-rate arrivals on a downlink.
fn trickle_oracle(cfg: &ScenarioConfig, out: &ScenarioOutput) -> Result<(Vec<u64>, Vec<u64>, u64), String> {
    let f = &out.metrics.flows[0];
    let t0 = data_start(out, cfg);
    let end = t0 + cfg.duration_us();
    let slots: Vec<u64> = ap_slots(out, cfg, "ap", out.training.sps_used()..cfg.beacon.sp_at_or_after(end) + 2)
        .iter()
        .filter(|s| s.category == SlotCategory::Data && s.transmitter() == Some(&f.ap))
        .map(|s| s.start_us)
        .collect();
    let mcs = cfg.mcs_table().unwrap();
    let rate = mcs.select(*f.snr_db.first().ok_or("nothing delivered")?).unwrap().phy_rate_bps;
    let air = airtime_us(cfg.frame_sizes.mpdu_bits(), rate);
    let prop = propagation_delay_us(f.distance_m);
    let rate_bps = 1e6;
    let gap = cfg.frame_sizes.payload_bits() as f64 * 1e6 / rate_bps;
    let mut expected = Vec::new();
    for k in 0.. {
        let a = t0 + (k as f64 * gap).floor() as u64;
        if a >= end {
            break;
        }
        let s = *slots.iter().find(|&&s| s >= a).ok_or("ran out of slots")?;
        if s + air + prop < end {
            expected.push(s - a + air + prop);
        }
    }
    Ok((expected, f.latency_us.clone(), air))
}

fn c6_latency() -> Outcome {
    let cfg = fixture("trickle_per_interval");
    let out = run(&cfg)?;
    let (expected, measured, air) = trickle_oracle(&cfg, &out)?;
    ensure!(
        measured == expected,
        "per-interval latencies differ from the slot-wait oracle ({} vs {} samples)",
        measured.len(),
        expected.len()
    );
    let max = *measured.iter().max().ok_or("no samples")?;
    ensure!(max <= cfg.slots.interval_us + air, "max latency {max} us exceeds interval + airtime");
    ensure!(REQUIREMENTS.latency_ok(max as f64 / 1e6), "15 ms check fails");

    let dcfg = fixture("trickle_default_layout");
    let dout = run(&dcfg)?;
    let (dexp, dmeas, _) = trickle_oracle(&dcfg, &dout)?;
    ensure!(dmeas == dexp, "default-layout latencies differ from the slot-wait oracle");
    let dmax = *dmeas.iter().max().ok_or("no samples")?;
    ensure!(dmax <= dcfg.beacon.sp_duration_us, "max latency {dmax} us exceeds one SP");
    Ok(format!(
        "per-interval: {} samples = oracle, max {max} us <= {} us; default layout: {} samples = oracle, max {dmax} us <= 25600 us",
        measured.len(),
        cfg.slots.interval_us + air,
        dmeas.len()
    ))
}

fn random_topology(
    rng: &mut ChaCha8Rng,
    cfg: &LinkBudgetConfig,
) -> (Vec<NodeModel>, Vec<TrainedLink>, Vec<DemandSpec>) {
    let n = rng.random_range(2..=12);
    let n_ap = rng.random_range(1..=(n / 3).max(1));
    let mut pos: Vec<(f64, f64)> = Vec::new();
    while pos.len() < n {
        let p = (rng.random_range(0.0..400.0), rng.random_range(0.0..400.0));
        if pos.iter().all(|q: &(f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() > 5.0) {
            pos.push(p);
        }
    }
    let nodes: Vec<NodeModel> = pos
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let (id, role) = if i < n_ap { (format!("ap{i}"), Role::DnAp) } else { (format!("sta{i}"), Role::CnSta) };
            node(&id, role, x, y, rng.random_range(8..=16), rng.random_range(0.0..360.0))
        })
        .collect();
    let mut links = Vec::new();
    let mut demands = Vec::new();
    for sta in &nodes[n_ap..] {
        let ap = nodes[..n_ap]
            .iter()
            .min_by(|a, b| a.position.distance_to(&sta.position).total_cmp(&b.position.distance_to(&sta.position)))
            .unwrap();
        links.push(trained(ap, sta, cfg));
        if rng.random_bool(0.8) {
            let rate = rng.random_range(5e7..3e9);
            demands.push(DemandSpec {
                ap: ap.id.clone(),
                sta: sta.id.clone(),
                direction: Direction::Downlink,
                rate_bps: rate,
            });
        }
        if rng.random_bool(0.35) {
            let rate = rng.random_range(5e7..1e9);
            demands.push(DemandSpec {
                ap: ap.id.clone(),
                sta: sta.id.clone(),
                direction: Direction::Uplink,
                rate_bps: rate,
            });
        }
    }
    (nodes, links, demands)
}

fn c7_controller() -> Outcome {
    let cfg = LinkBudgetConfig::default();
    let mcs = McsTable::default();
    let template = TddSlotStructure::default_layout(0);
    let ccfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut small, mut slots_checked) = (0, 0);
    for case in 0..200 {
        let (nodes, links, demands) = random_topology(&mut rng, &cfg);
        let graph = build_interference_graph(&nodes, &links, &[], &cfg).map_err(|e| e.to_string())?;
        let s = assign_slots(&graph, &demands, &template, &mcs, &ccfg).map_err(|e| e.to_string())?;
        if let Err(v) = verify_global(&s, &graph, &mcs) {
            return Err(format!("case {case}: verify_global rejects the plan: {}", v[0]));
        }
        let n = graph.vertices.len();
        if n == 0 || n > 8 {
            continue;
        }
        small += 1;
        // every independent set, by exhaustive enumeration
        let independent: BTreeSet<u32> = (0u32..1 << n)
            .filter(|m| {
                (0..n).all(|a| (a + 1..n).all(|b| m & (1 << a) == 0 || m & (1 << b) == 0 || !graph.adjacent(a, b)))
            })
            .collect();
        let cands: Vec<(usize, Direction)> = s
            .grants
            .iter()
            .map(|g| {
                let (tx, rx) = match g.direction {
                    Direction::Downlink => (&g.ap, &g.sta),
                    Direction::Uplink => (&g.sta, &g.ap),
                };
                (graph.index_of(tx, rx).unwrap(), g.direction)
            })
            .collect();
        let per_slot = s.slot_links(&graph);
        for slot in template.data_slots() {
            let set = &per_slot[slot];
            let mask: u32 = set.iter().map(|&v| 1 << v).sum();
            if !independent.contains(&mask) {
                return Err(format!("case {case}: slot {slot} set {set:?} is not independent"));
            }
            let Some(&first) = set.first() else {
                if cands.is_empty() {
                    continue;
                }
                return Err(format!("case {case}: DATA slot {slot} left empty"));
            };
            let dir = cands.iter().find(|c| c.0 == first).map(|c| c.1).ok_or("slot link without a grant")?;
            for &(v, d) in &cands {
                if d == dir && mask & (1 << v) == 0 && independent.contains(&(mask | 1 << v)) {
                    return Err(format!("case {case}: slot {slot} could also carry link {v}"));
                }
            }
            slots_checked += 1;
        }
    }
    ensure!(small > 0, "no small instances generated");

    let single = {
        let mut c = fixture("two_isolated_links");
        c.nodes.retain(|n| n.id.as_str().ends_with('1'));
        c.demands.retain(|d| d.ap.as_str() == "ap1");
        run(&c)?
    };
    let both = run(&fixture("two_isolated_links"))?;
    let agg = |o: &ScenarioOutput| o.metrics.flows.iter().map(|f| f.goodput_bps(o.metrics.duration_us)).sum::<f64>();
    let ratio = agg(&both) / agg(&single);
    ensure!(ratio >= 1.9, "spatial reuse ratio {ratio:.3}");
    Ok(format!(
        "200/200 plans verified, {small} small instances ({slots_checked} slots) match independent-set enumeration, reuse {ratio:.3}x"
    ))
}

fn c8_periodic_reports() -> Outcome {
    let cfg = fixture("periodic_reports");
    let out = run(&cfg)?;
    let t0 = data_start(&out, &cfg);
    let end = t0 + cfg.duration_us();
    let spec = &cfg.maintenance.periodic_reports[0];
    let slots =
        ap_slots(&out, &cfg, spec.requester.as_str(), out.training.sps_used()..cfg.beacon.sp_at_or_after(end) + 2);
    let expected: Vec<u64> = spec
        .request
        .nominal_times()
        .map(|t| {
            slots
                .iter()
                .filter(|s| s.carries(&spec.responder, &spec.requester) && s.start_us >= t0 + t)
                .map(|s| s.start_us)
                .min()
                .unwrap()
        })
        .collect();
    let reports: Vec<u64> = frames(&out.trace, TraceKind::FrameTxStart, FrameKind::LinkMeasurementReport)
        .map(|r| r.frame.as_ref().unwrap().start_us)
        .collect();
    ensure!(reports == expected, "reports at {reports:?}, expected {expected:?}");
    let requests: Vec<u64> =
        frames(&out.trace, TraceKind::FrameTxStart, FrameKind::LinkMeasurementRequest).map(|r| r.t).collect();
    let between = requests.iter().filter(|&&t| t > reports[0] && t < reports[reports.len() - 1]).count();
    ensure!(between == 0, "{between} requests between reports");
    ensure!(requests.len() == 1, "{} requests sent", requests.len());
    Ok(format!(
        "3 reports at {:?} us (slot-aligned), 0 requests in between",
        reports.iter().map(|t| t - t0).collect::<Vec<_>>()
    ))
}

fn c9_tpc() -> Outcome {
    let mut cfg = fixture("tpc_static");
    // target 9 dB below the RSNI the link starts with
    let nodes = cfg.node_models().unwrap();
    let start = best_pair(&nodes[0], &nodes[1], &cfg.link_budget).2;
    let tpc = cfg.maintenance.tpc.as_mut().unwrap();
    tpc.target_rsni_db = start - 9.0;
    let (target, step) = (tpc.target_rsni_db, tpc.max_step_db);
    let out = run(&cfg)?;
    let rsni: Vec<f64> = frames(&out.trace, TraceKind::FrameRxComplete, FrameKind::LinkMeasurementReport)
        .filter(|r| r.outcome.as_deref() == Some("ok"))
        .map(|r| match &r.frame.as_ref().unwrap().body {
            tddsim::frame::TddFrame::LinkMeasurementReport(rep) => rep.rsni_db,
            _ => unreachable!(),
        })
        .collect();
    ensure!(rsni.len() >= 5, "only {} reports", rsni.len());
    ensure!((rsni[0] - target - 9.0).abs() < 1e-9, "initial error {:.3} dB", rsni[0] - target);
    let updates = rsni.iter().position(|r| (r - target).abs() <= 3.0).ok_or("never converged")?;
    ensure!(updates <= 4, "{updates} updates to converge");
    ensure!(rsni[updates..].iter().all(|r| (r - target).abs() <= 3.0), "left the 3 dB band after converging");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let lo = rng.random_range(-20.0..10.0);
        let limits = TpcLimits {
            min_dbm: lo,
            max_dbm: lo + rng.random_range(0.0..30.0),
            max_step_db: rng.random_range(0.5..6.0),
        };
        let gain = rng.random_range(-10.0..40.0);
        let target = rng.random_range(0.0..30.0);
        let mut p = rng.random_range(limits.min_dbm..=limits.max_dbm);
        for _ in 0..20 {
            let next = tpc_update(p, p + gain, target, &limits);
            ensure!(next >= limits.min_dbm && next <= limits.max_dbm, "power {next} outside {limits:?}");
            ensure!((next - p).abs() <= limits.max_step_db + 1e-9, "step {} too large", next - p);
            p = next;
        }
    }
    Ok(format!(
        "9 dB error at step {step} dB converged after {updates} updates; 2000 fuzzed links stayed within limits"
    ))
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut names: Vec<PathBuf> = std::fs::read_dir(fixtures_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for path in names {
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let mut traces = Vec::new();
        for k in 0..2 {
            let trace = dir.path().join(format!("{name}-{k}.jsonl"));
            let status = Command::new(env!("CARGO_BIN_EXE_tddsim"))
                .args(["run", "--config"])
                .arg(&path)
                .arg("--trace")
                .arg(&trace)
                .output()
                .map_err(|e| e.to_string())?
                .status;
            if status.code() == Some(3) {
                break;
            }
            ensure!(status.success(), "{name}: exit {status}");
            traces.push(std::fs::read(&trace).map_err(|e| e.to_string())?);
        }
        if traces.len() == 2 {
            ensure!(!traces[0].is_empty(), "{name}: empty trace");
            ensure!(traces[0] == traces[1], "{name}: traces differ");
            checked += 1;
        }
    }
    ensure!(checked >= 5, "only {checked} fixtures ran");
    Ok(format!("{checked} fixtures produce byte-identical traces across two runs"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("timescale expansion", c1_timescales),
        ("beamforming oracle equivalence", c2_beamforming_oracle),
        ("group and measurement beamforming", c3_group_beamforming),
        ("delayed-ack placement", c4_delayed_ack),
        ("throughput accounting", c5_throughput),
        ("per-hop latency", c6_latency),
        ("controller closed loop", c7_controller),
        ("periodic measurement exactness", c8_periodic_reports),
        ("TPC convergence", c9_tpc),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
