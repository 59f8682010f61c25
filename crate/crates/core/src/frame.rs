//! Every MAC frame the simulator moves between nodes.

use serde::{Deserialize, Serialize};

use crate::beamforming::{TddSswAckFrame, TddSswFeedbackFrame, TddSswFrame};
use crate::maintenance::{AnnounceFrame, LinkMeasurementReport, PeriodicReportRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    TddSsw,
    TddSswFeedback,
    TddSswAck,
    Announce,
    LinkMeasurementRequest,
    LinkMeasurementReport,
    Ack,
    BlockAck,
    Data,
    Rts,
    DmgCts,
    Grant,
    GrantAck,
}

impl FrameKind {
    pub fn is_ack(self) -> bool {
        matches!(self, FrameKind::Ack | FrameKind::BlockAck)
    }

    pub fn is_control_or_management(self) -> bool {
        !matches!(self, FrameKind::Data)
    }
}

/// One fragment of an MPDU carried inside a data burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub mpdu: u64,
    pub bits: u64,
    pub last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TddFrame {
    TddSsw(TddSswFrame),
    TddSswFeedback(TddSswFeedbackFrame),
    TddSswAck(TddSswAckFrame),
    Announce(AnnounceFrame),
    LinkMeasurementRequest {
        request: PeriodicReportRequest,
    },
    LinkMeasurementReport(LinkMeasurementReport),
    /// Acknowledges a single management frame.
    Ack,
    /// Acknowledges every MPDU in `acked` (ids, ascending).
    BlockAck {
        acked: Vec<u64>,
    },
    /// An aggregate of MPDU fragments filling (part of) a DATA slot.
    Data {
        mcs: u8,
        bits: u64,
        fragments: Vec<Fragment>,
    },
    Rts,
    DmgCts,
    Grant,
    GrantAck,
}

impl TddFrame {
    pub fn kind(&self) -> FrameKind {
        match self {
            TddFrame::TddSsw(_) => FrameKind::TddSsw,
            TddFrame::TddSswFeedback(_) => FrameKind::TddSswFeedback,
            TddFrame::TddSswAck(_) => FrameKind::TddSswAck,
            TddFrame::Announce(_) => FrameKind::Announce,
            TddFrame::LinkMeasurementRequest { .. } => FrameKind::LinkMeasurementRequest,
            TddFrame::LinkMeasurementReport(_) => FrameKind::LinkMeasurementReport,
            TddFrame::Ack => FrameKind::Ack,
            TddFrame::BlockAck { .. } => FrameKind::BlockAck,
            TddFrame::Data { .. } => FrameKind::Data,
            TddFrame::Rts => FrameKind::Rts,
            TddFrame::DmgCts => FrameKind::DmgCts,
            TddFrame::Grant => FrameKind::Grant,
            TddFrame::GrantAck => FrameKind::GrantAck,
        }
    }
}

/// Fixed frame sizes used for airtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSizes {
    pub data_payload_bytes: u64,
    pub data_overhead_bytes: u64,
    pub ssw_bytes: u64,
    pub ack_bytes: u64,
    pub announce_bytes: u64,
    pub measurement_bytes: u64,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            data_payload_bytes: 1500,
            data_overhead_bytes: 40,
            ssw_bytes: 32,
            ack_bytes: 16,
            announce_bytes: 128,
            measurement_bytes: 64,
        }
    }
}

impl FrameSizes {
    pub fn mpdu_bits(&self) -> u64 {
        (self.data_payload_bytes + self.data_overhead_bytes) * 8
    }

    pub fn payload_bits(&self) -> u64 {
        self.data_payload_bytes * 8
    }

    /// Size of a non-data frame in bits.
    pub fn control_bits(&self, kind: FrameKind) -> u64 {
        8 * match kind {
            FrameKind::TddSsw | FrameKind::TddSswFeedback | FrameKind::TddSswAck => self.ssw_bytes,
            FrameKind::Ack | FrameKind::BlockAck | FrameKind::Rts | FrameKind::DmgCts => self.ack_bytes,
            FrameKind::Grant | FrameKind::GrantAck => self.ack_bytes,
            FrameKind::Announce => self.announce_bytes,
            FrameKind::LinkMeasurementRequest | FrameKind::LinkMeasurementReport => self.measurement_bytes,
            FrameKind::Data => self.data_payload_bytes + self.data_overhead_bytes,
        }
    }
}

/// Airtime of `bits` at `rate_bps`, rounded up to whole microseconds.
pub fn airtime_us(bits: u64, rate_bps: f64) -> u64 {
    ((bits as f64) * 1e6 / rate_bps).ceil() as u64
}

/// Whole bits that fit in `us` microseconds at `rate_bps`.
pub fn bits_in(us: u64, rate_bps: f64) -> u64 {
    ((us as f64) * rate_bps / 1e6).floor() as u64
}
