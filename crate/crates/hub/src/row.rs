use maskloop_core::{Message, MessageKind};
use serde::{Deserialize, Serialize};

pub const STORE_SCHEMA_VERSION: u32 = 1;

/// One decoded device frame as persisted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryRow {
    /// Position in the session log, from 0.
    pub n: u64,
    /// Device time; frames without a timestamp inherit the last one seen.
    pub ts_ms: u32,
    pub seq: u16,
    pub kind: MessageKind,
    pub payload: Message,
}

impl TelemetryRow {
    /// The row's log line, newline included.
    pub fn to_line(&self) -> Vec<u8> {
        let mut line = serde_json::to_vec(self).expect("row serializes");
        line.push(b'\n');
        line
    }
}

/// Fixed-width record of `rows.idx`: byte offset of the row's line in
/// `rows.ndjson`, then `ts_ms`, `seq` and the kind byte, little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub offset: u64,
    pub ts_ms: u32,
    pub seq: u16,
    pub kind: u8,
}

impl IndexEntry {
    pub const LEN: usize = 16;

    pub fn to_bytes(self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..8].copy_from_slice(&self.offset.to_le_bytes());
        b[8..12].copy_from_slice(&self.ts_ms.to_le_bytes());
        b[12..14].copy_from_slice(&self.seq.to_le_bytes());
        b[14] = self.kind;
        b
    }

    pub fn from_bytes(b: &[u8; Self::LEN]) -> Self {
        Self {
            offset: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            ts_ms: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            seq: u16::from_le_bytes(b[12..14].try_into().unwrap()),
            kind: b[14],
        }
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub schema_version: u32,
    pub session_id: String,
    pub device_id: String,
    pub started_at_ms: u64,
    pub ended_at_ms: Option<u64>,
}

impl SessionMeta {
    pub fn is_closed(&self) -> bool {
        self.ended_at_ms.is_some()
    }
}

/// Ingest counters of one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounters {
    pub frames: u64,
    pub nacks: u64,
    pub bad_crc: u64,
    /// Sequence numbers skipped between accepted frames.
    pub seq_gaps: u64,
    pub storage_full: u64,
    pub out_of_order: u64,
}

impl IngestCounters {
    /// Frames known to be lost: rejected ones plus sequence gaps.
    pub fn lost(&self) -> u64 {
        self.nacks + self.seq_gaps
    }
}

/// Why an uplink frame was not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NackReason {
    BadCrc,
    /// Framing or payload error other than the checksum.
    Malformed(String),
    OutOfOrder,
    StorageFull,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IngestReply {
    Ack { seq: u16, n: u64 },
    Nack { reason: NackReason, lost: u64 },
}

/// Proof a command was framed and queued for the device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub session_id: String,
    pub seq: u16,
    pub kind: MessageKind,
}

/// One line of `commands.ndjson`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub seq: u16,
    /// Rows stored when the command was relayed.
    pub after_rows: u64,
    pub message: Message,
}
