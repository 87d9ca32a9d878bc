//! Hub for maskloop devices: append-only session logs, a command relay to
//! attached devices, range queries, anonymized exports and an HTTP and
//! websocket front end.
//!
//! Each session lives in its own directory:
//!
//! - `meta.json`: ids, start and end stamps, ingest counters
//! - `rows.ndjson`: one [`TelemetryRow`] per line, in ingest order
//! - `rows.idx`: one 16-byte [`IndexEntry`] per row
//! - `commands.ndjson`: relayed host commands

mod error;
pub mod http;
mod link;
mod row;
mod store;

pub use error::HubError;
pub use link::HubLink;
pub use row::{
    CommandRecord, IndexEntry, IngestCounters, IngestReply, NackReason, Receipt, SessionMeta, TelemetryRow,
    STORE_SCHEMA_VERSION,
};
pub use store::{
    Clock, ExportRecord, FitSummary, HistogramBin, Hub, HubConfig, HubStats, LiveEvent, RangeQuery, RowPage,
    SessionInfo, SessionStats, WEAR_BINS, WEAR_BIN_MIN,
};
