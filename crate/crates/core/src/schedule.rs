//! TDD service-period scheduling: SP allocation, slot structure expansion,
//! access assignment, delayed-acknowledgement placement and frame
//! admissibility inside TDD slots.
//!
//! Time is integer microseconds throughout.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, NodeModel};
use crate::error::{Error, Result};
use crate::frame::FrameKind;

/// SP allocation carried by the Extended Schedule element. `is_tdd` is the
/// indication bit separating a TDD SP from a conventional SP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedScheduleEntry {
    pub allocation_id: u8,
    /// Offset from the start of the beacon interval.
    pub start_us: u64,
    pub duration_us: u64,
    pub is_tdd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotCategory {
    /// Control frames (delayed acks first) have priority.
    Basic,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub start_offset_us: u64,
    pub duration_us: u64,
    pub category: SlotCategory,
}

impl SlotSpec {
    pub fn end_offset_us(&self) -> u64 {
        self.start_offset_us + self.duration_us
    }
}

/// Slot layout of one TDD interval (TDD Slot Structure element).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TddSlotStructure {
    pub allocation_id: u8,
    pub interval_duration_us: u64,
    pub slots: Vec<SlotSpec>,
}

pub const DEFAULT_SLOT_US: u64 = 66;
pub const DEFAULT_INTERVAL_US: u64 = 1_600;
pub const DEFAULT_SLOTS_PER_INTERVAL: usize = 24;
pub const DEFAULT_SP_US: u64 = 25_600;
pub const DEFAULT_BEACON_INTERVAL_US: u64 = 300_000;
pub const DEFAULT_BASIC_SLOTS: [usize; 2] = [0, 12];

impl TddSlotStructure {
    /// Back-to-back equal slots starting at offset 0; any remainder of the
    /// interval is a trailing guard.
    pub fn uniform(allocation_id: u8, interval_us: u64, slot_us: u64, count: usize, basic: &[usize]) -> Self {
        TddSlotStructure {
            allocation_id,
            interval_duration_us: interval_us,
            slots: (0..count)
                .map(|i| SlotSpec {
                    start_offset_us: i as u64 * slot_us,
                    duration_us: slot_us,
                    category: if basic.contains(&i) { SlotCategory::Basic } else { SlotCategory::Data },
                })
                .collect(),
        }
    }

    /// 24 × 66 µs in a 1.6 ms interval, BASIC at slots 0 and 12, 16 µs guard.
    pub fn default_layout(allocation_id: u8) -> Self {
        Self::uniform(
            allocation_id,
            DEFAULT_INTERVAL_US,
            DEFAULT_SLOT_US,
            DEFAULT_SLOTS_PER_INTERVAL,
            &DEFAULT_BASIC_SLOTS,
        )
    }

    pub fn basic_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter(|(_, s)| s.category == SlotCategory::Basic).map(|(i, _)| i)
    }

    pub fn data_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter(|(_, s)| s.category == SlotCategory::Data).map(|(i, _)| i)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.interval_duration_us == 0 {
            out.push(Violation::ZeroDuration { slot: None });
        }
        for (i, s) in self.slots.iter().enumerate() {
            if s.duration_us == 0 {
                out.push(Violation::ZeroDuration { slot: Some(i) });
            }
            if s.end_offset_us() > self.interval_duration_us {
                out.push(Violation::SlotOutsideInterval { slot: i });
            }
        }
        let mut order: Vec<usize> = (0..self.slots.len()).collect();
        order.sort_by_key(|&i| (self.slots[i].start_offset_us, i));
        for w in order.windows(2) {
            let (a, b) = (&self.slots[w[0]], &self.slots[w[1]]);
            if b.start_offset_us < a.end_offset_us() {
                out.push(Violation::OverlappingSlots { a: w[0].min(w[1]), b: w[0].max(w[1]) });
            }
        }
        if self.basic_slots().next().is_none() {
            out.push(Violation::NoBasicSlot);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// AP transmits, STA receives.
    #[default]
    Downlink,
    /// STA transmits, AP receives.
    Uplink,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Downlink => Direction::Uplink,
            Direction::Uplink => Direction::Downlink,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Downlink => "DL",
            Direction::Uplink => "UL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub slot_index: usize,
    /// `None` means UNASSIGNED.
    pub assignee: Option<NodeId>,
    pub direction: Direction,
}

/// Per-slot access assignment of one AP (TDD Slot Schedule element).
/// Slots without an entry are unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TddSlotSchedule {
    pub allocation_id: u8,
    pub ap: NodeId,
    pub entries: Vec<SlotAssignment>,
}

impl TddSlotSchedule {
    pub fn new(allocation_id: u8, ap: NodeId) -> Self {
        TddSlotSchedule { allocation_id, ap, entries: Vec::new() }
    }

    pub fn assign(&mut self, slot_index: usize, sta: NodeId, direction: Direction) {
        self.entries.push(SlotAssignment { slot_index, assignee: Some(sta), direction });
    }

    /// The single effective assignment per slot index, or the first
    /// conflicting pair of entries.
    fn resolve(
        &self,
    ) -> std::result::Result<BTreeMap<usize, &SlotAssignment>, (usize, &SlotAssignment, &SlotAssignment)> {
        let mut map: BTreeMap<usize, &SlotAssignment> = BTreeMap::new();
        for e in &self.entries {
            if let Some(prev) = map.get(&e.slot_index) {
                if *prev != e {
                    return Err((e.slot_index, prev, e));
                }
            } else {
                map.insert(e.slot_index, e);
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    AllocationMismatch { structure: u8, schedule: u8 },
    ZeroDuration { slot: Option<usize> },
    SlotOutsideInterval { slot: usize },
    OverlappingSlots { a: usize, b: usize },
    NoBasicSlot,
    DualDirection { slot: usize },
    ConflictingAssignees { slot: usize },
    DanglingSlot { slot: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AllocationMismatch { structure, schedule } => {
                write!(f, "allocation id mismatch: structure {structure}, schedule {schedule}")
            }
            Violation::ZeroDuration { slot: Some(i) } => write!(f, "zero-duration slot {i}"),
            Violation::ZeroDuration { slot: None } => write!(f, "zero-duration interval"),
            Violation::SlotOutsideInterval { slot } => write!(f, "slot {slot} extends past the interval"),
            Violation::OverlappingSlots { a, b } => write!(f, "overlapping slots {a} and {b}"),
            Violation::NoBasicSlot => write!(f, "no basic slot"),
            Violation::DualDirection { slot } => write!(f, "dual-direction slot {slot}"),
            Violation::ConflictingAssignees { slot } => write!(f, "conflicting assignees in slot {slot}"),
            Violation::DanglingSlot { slot } => write!(f, "dangling slot index {slot}"),
        }
    }
}

/// All rule violations of a structure/schedule pair; empty means valid.
pub fn validate_schedule(
    structure: &TddSlotStructure,
    schedule: &TddSlotSchedule,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = structure.violations();
    if structure.allocation_id != schedule.allocation_id {
        out.push(Violation::AllocationMismatch {
            structure: structure.allocation_id,
            schedule: schedule.allocation_id,
        });
    }
    let mut seen: BTreeMap<usize, &SlotAssignment> = BTreeMap::new();
    for e in &schedule.entries {
        if e.slot_index >= structure.slots.len() {
            out.push(Violation::DanglingSlot { slot: e.slot_index });
            continue;
        }
        match seen.get(&e.slot_index) {
            None => {
                seen.insert(e.slot_index, e);
            }
            Some(prev) if prev.direction != e.direction => out.push(Violation::DualDirection { slot: e.slot_index }),
            Some(prev) if prev.assignee != e.assignee => {
                out.push(Violation::ConflictingAssignees { slot: e.slot_index })
            }
            Some(_) => {}
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsoluteSlot {
    pub sp_allocation_id: u8,
    pub ap: NodeId,
    pub interval_index: usize,
    pub slot_index: usize,
    pub start_us: u64,
    pub duration_us: u64,
    pub category: SlotCategory,
    pub assignee: Option<NodeId>,
    pub direction: Option<Direction>,
}

impl AbsoluteSlot {
    pub fn end_us(&self) -> u64 {
        self.start_us + self.duration_us
    }

    pub fn transmitter(&self) -> Option<&NodeId> {
        match (self.direction?, self.assignee.as_ref()?) {
            (Direction::Downlink, _) => Some(&self.ap),
            (Direction::Uplink, sta) => Some(sta),
        }
    }

    pub fn receiver(&self) -> Option<&NodeId> {
        match (self.direction?, self.assignee.as_ref()?) {
            (Direction::Downlink, sta) => Some(sta),
            (Direction::Uplink, _) => Some(&self.ap),
        }
    }

    /// True when `node` transmits to `peer` in this slot.
    pub fn carries(&self, node: &NodeId, peer: &NodeId) -> bool {
        self.transmitter() == Some(node) && self.receiver() == Some(peer)
    }
}

/// Expands a TDD SP into absolute slots (intervals × slots, time-ordered).
/// `entry.start_us` is taken as the absolute SP start.
pub fn expand_sp(
    entry: &ExtendedScheduleEntry,
    structure: &TddSlotStructure,
    schedule: &TddSlotSchedule,
) -> Result<Vec<AbsoluteSlot>> {
    if !entry.is_tdd {
        return Err(Error::invalid(format!("allocation {} is not a TDD SP", entry.allocation_id)));
    }
    if entry.allocation_id != structure.allocation_id || entry.allocation_id != schedule.allocation_id {
        return Err(Error::invalid(format!(
            "allocation id mismatch: SP {}, structure {}, schedule {}",
            entry.allocation_id, structure.allocation_id, schedule.allocation_id
        )));
    }
    if structure.interval_duration_us == 0
        || entry.duration_us == 0
        || !entry.duration_us.is_multiple_of(structure.interval_duration_us)
    {
        return Err(Error::Structure(format!(
            "SP duration {}us is not a positive multiple of the {}us interval",
            entry.duration_us, structure.interval_duration_us
        )));
    }
    let assignment = schedule.resolve().map_err(|(slot, a, b)| {
        if a.direction != b.direction {
            Error::Structure(format!("dual-direction slot {slot} in schedule of {}", schedule.ap))
        } else {
            Error::Structure(format!("conflicting assignees in slot {slot} in schedule of {}", schedule.ap))
        }
    })?;
    if let Some((&slot, _)) = assignment.range(structure.slots.len()..).next() {
        return Err(Error::Structure(format!("dangling slot index {slot} in schedule of {}", schedule.ap)));
    }

    let mut order: Vec<usize> = (0..structure.slots.len()).collect();
    order.sort_by_key(|&i| (structure.slots[i].start_offset_us, i));

    let intervals = (entry.duration_us / structure.interval_duration_us) as usize;
    let mut out = Vec::with_capacity(intervals * order.len());
    for k in 0..intervals {
        let base = entry.start_us + k as u64 * structure.interval_duration_us;
        for &i in &order {
            let spec = &structure.slots[i];
            let a = assignment.get(&i);
            out.push(AbsoluteSlot {
                sp_allocation_id: entry.allocation_id,
                ap: schedule.ap.clone(),
                interval_index: k,
                slot_index: i,
                start_us: base + spec.start_offset_us,
                duration_us: spec.duration_us,
                category: spec.category,
                assignee: a.and_then(|a| a.assignee.clone()),
                direction: a.and_then(|a| a.assignee.as_ref().map(|_| a.direction)),
            });
        }
    }
    Ok(out)
}

/// Earliest BASIC slot starting strictly after `after_us` in which `node`
/// is assigned to transmit. `slots` must be sorted by start time.
pub fn next_basic_tx_slot<'a>(slots: &'a [AbsoluteSlot], node: &NodeId, after_us: u64) -> Result<&'a AbsoluteSlot> {
    next_basic_where(slots, after_us, |s| s.transmitter() == Some(node))
        .ok_or_else(|| Error::NoOpportunity { node: node.clone(), after_us })
}

/// As [`next_basic_tx_slot`], restricted to slots where `node` transmits
/// towards `peer`.
pub fn next_basic_tx_slot_to<'a>(
    slots: &'a [AbsoluteSlot],
    node: &NodeId,
    peer: &NodeId,
    after_us: u64,
) -> Result<&'a AbsoluteSlot> {
    next_basic_where(slots, after_us, |s| s.carries(node, peer))
        .ok_or_else(|| Error::NoOpportunity { node: node.clone(), after_us })
}

fn next_basic_where(
    slots: &[AbsoluteSlot],
    after_us: u64,
    pred: impl Fn(&AbsoluteSlot) -> bool,
) -> Option<&AbsoluteSlot> {
    let from = slots.partition_point(|s| s.start_us <= after_us);
    slots[from..].iter().find(|s| s.category == SlotCategory::Basic && pred(s))
}

/// Frames soliciting an immediate response cannot be used inside a TDD slot.
pub fn is_frame_allowed_in_tdd_slot(kind: FrameKind) -> bool {
    !matches!(kind, FrameKind::Rts | FrameKind::DmgCts | FrameKind::Grant | FrameKind::GrantAck)
}

/// Non-TDD STAs treat a TDD SP as a conventional SP not assigned to them.
pub fn can_access_tdd_sp(sta: &NodeModel, entry: &ExtendedScheduleEntry) -> bool {
    sta.tdd_capable && entry.is_tdd
}

/// Beacon-interval layout: `sp_count` back-to-back TDD SPs of
/// `sp_duration_us` starting `sp_offset_us` into each beacon interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeaconLayout {
    pub beacon_interval_us: u64,
    pub sp_offset_us: u64,
    pub sp_duration_us: u64,
    pub sp_count: u32,
}

impl Default for BeaconLayout {
    fn default() -> Self {
        BeaconLayout {
            beacon_interval_us: DEFAULT_BEACON_INTERVAL_US,
            sp_offset_us: 0,
            sp_duration_us: DEFAULT_SP_US,
            // 11 × 25.6 ms fits in a 300 ms BI
            sp_count: 11,
        }
    }
}

impl BeaconLayout {
    pub fn validate(&self, interval_us: u64) -> Result<()> {
        if self.beacon_interval_us == 0 || self.sp_count == 0 {
            return Err(Error::Structure("beacon interval and SP count must be positive".into()));
        }
        if interval_us == 0 || self.sp_duration_us == 0 || !self.sp_duration_us.is_multiple_of(interval_us) {
            return Err(Error::Structure(format!(
                "SP duration {}us is not a positive multiple of the {}us interval",
                self.sp_duration_us, interval_us
            )));
        }
        let end = self.sp_offset_us + self.sp_count as u64 * self.sp_duration_us;
        if end > self.beacon_interval_us {
            return Err(Error::Structure(format!(
                "{} SPs of {}us from offset {}us overrun the {}us beacon interval",
                self.sp_count, self.sp_duration_us, self.sp_offset_us, self.beacon_interval_us
            )));
        }
        Ok(())
    }

    /// Absolute start of SP instance `n` (counting across beacon intervals).
    pub fn sp_start_us(&self, n: u64) -> u64 {
        let bi = n / self.sp_count as u64;
        let k = n % self.sp_count as u64;
        bi * self.beacon_interval_us + self.sp_offset_us + k * self.sp_duration_us
    }

    pub fn sp_entry(&self, allocation_id: u8, n: u64) -> ExtendedScheduleEntry {
        ExtendedScheduleEntry {
            allocation_id,
            start_us: self.sp_start_us(n),
            duration_us: self.sp_duration_us,
            is_tdd: true,
        }
    }

    /// First SP instance whose end lies after `t_us`.
    pub fn sp_at_or_after(&self, t_us: u64) -> u64 {
        let per = self.sp_count as u64;
        let bi = t_us / self.beacon_interval_us;
        for n in bi * per..(bi + 2) * per {
            if self.sp_start_us(n) + self.sp_duration_us > t_us {
                return n;
            }
        }
        (bi + 2) * per
    }
}

/// Structure updates received mid-SP take effect at the next SP boundary.
#[derive(Debug, Clone, Default)]
pub struct StructureStore {
    active: BTreeMap<u8, TddSlotStructure>,
    pending: BTreeMap<u8, TddSlotStructure>,
}

impl StructureStore {
    pub fn install(&mut self, s: TddSlotStructure) {
        self.active.insert(s.allocation_id, s);
    }

    pub fn update(&mut self, s: TddSlotStructure) {
        self.pending.insert(s.allocation_id, s);
    }

    pub fn on_sp_boundary(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        self.active.extend(pending);
    }

    pub fn get(&self, allocation_id: u8) -> Option<&TddSlotStructure> {
        self.active.get(&allocation_id)
    }
}
