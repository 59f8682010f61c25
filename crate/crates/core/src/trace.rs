//! JSON-lines event trace.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::domain::NodeId;
use crate::frame::{FrameKind, TddFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    SlotBoundary,
    FrameTxStart,
    FrameRxComplete,
    Timer,
    MaintenanceTick,
    /// Out-of-band delivery to the controller (measurement reports, dead links).
    ControllerReport,
    /// A frame that was refused or dropped before transmission.
    FrameDropped,
    /// Planner output and its annotations.
    Planner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub sp: u64,
    pub interval: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub kind: FrameKind,
    pub src: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_sector: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_sector: Option<usize>,
    pub start_us: u64,
    pub end_us: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub body: TddFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub seq: u64,
    pub kind: TraceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<TraceFrame>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
}

/// In-memory trace; `seq` is assigned on append and strictly increases.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    records: Vec<TraceRecord>,
    enabled: bool,
}

impl Trace {
    pub fn new() -> Self {
        Trace { records: Vec::new(), enabled: true }
    }

    /// A trace that drops everything (for large sweeps).
    pub fn disabled() -> Self {
        Trace { records: Vec::new(), enabled: false }
    }

    pub fn push(
        &mut self,
        t: u64,
        kind: TraceKind,
        node: Option<&NodeId>,
        slot: Option<SlotRef>,
        frame: Option<TraceFrame>,
        outcome: Option<String>,
    ) {
        if !self.enabled {
            return;
        }
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { t, seq, kind, node: node.cloned(), slot, frame, outcome });
    }

    pub fn note(&mut self, t: u64, kind: TraceKind, node: Option<&NodeId>, outcome: impl Into<String>) {
        self.push(t, kind, node, None, None, Some(outcome.into()));
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

pub fn parse_jsonl(text: &str) -> serde_json::Result<Vec<TraceRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
