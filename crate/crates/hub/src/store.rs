use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use maskloop_core::protocol::{encode_frame, DecodeError, FrameDecoder, SeqCounter, StreamEvent};
use maskloop_core::{AlertCode, DeviceMode, FitColor, Message, MessageKind};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::{broadcast, Notify};

use crate::error::HubError;
use crate::row::{
    CommandRecord, IndexEntry, IngestCounters, IngestReply, NackReason, Receipt, SessionMeta, TelemetryRow,
    STORE_SCHEMA_VERSION,
};

const META: &str = "meta.json";
const ROWS: &str = "rows.ndjson";
const INDEX: &str = "rows.idx";
const COMMANDS: &str = "commands.ndjson";

/// Source of session start and end stamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    /// Every stamp reads this value; keeps stored metadata reproducible.
    Fixed(u64),
}

impl Clock {
    fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            Clock::Fixed(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub data_dir: PathBuf,
    /// Mixed into device digests of anonymized exports.
    pub salt: String,
    /// Rows buffered before a write; a crash loses at most this many.
    pub flush_rows: usize,
    pub fsync: bool,
    pub max_rows_per_session: u64,
    pub live_capacity: usize,
    pub clock: Clock,
}

impl HubConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            salt: String::new(),
            flush_rows: 64,
            fsync: true,
            max_rows_per_session: 10_000_000,
            live_capacity: 4096,
            clock: Clock::System,
        }
    }
}

/// What live subscribers receive, in ingest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiveEvent {
    /// A stored row and its wire frame.
    Frame { n: u64, bytes: Arc<[u8]> },
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RangeQuery {
    pub t0: u32,
    pub t1: u32,
    /// `None` selects every kind.
    pub kinds: Option<Vec<MessageKind>>,
    /// Matching rows to skip.
    pub offset: usize,
    pub limit: Option<usize>,
}

impl RangeQuery {
    pub fn all() -> Self {
        Self {
            t0: 0,
            t1: u32::MAX,
            ..Self::default()
        }
    }

    pub fn matches(&self, row: &TelemetryRow) -> bool {
        row.ts_ms >= self.t0
            && row.ts_ms <= self.t1
            && self.kinds.as_ref().is_none_or(|k| k.contains(&row.kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPage {
    pub rows: Vec<TelemetryRow>,
    /// Offset of the next page, if more rows match.
    pub next_offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub meta: SessionMeta,
    pub rows: u64,
    pub counters: IngestCounters,
    pub device_attached: bool,
    pub commands_relayed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub schema_version: u32,
    pub session_id: String,
    /// Salted SHA-256 of the device id, hex.
    pub device_digest: String,
    pub started_at_ms: u64,
    pub ended_at_ms: u64,
    pub row_count: u64,
    pub rows: Vec<TelemetryRow>,
}

/// Share of sensing points per color over all fit-state updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub updates: u64,
    pub red: f64,
    pub yellow: f64,
    pub green: f64,
    pub dark_gray: f64,
    /// Share of updates with every point green.
    pub all_green: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub rows: u64,
    pub kinds: BTreeMap<MessageKind, u64>,
    pub alerts: BTreeMap<AlertCode, u64>,
    pub fit: FitSummary,
    /// Device time spent in the wearing modes.
    pub wear_ms: u64,
    pub counters: IngestCounters,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub from_min: u32,
    /// `None` for the open-ended last bin.
    pub to_min: Option<u32>,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubStats {
    pub sessions: u64,
    pub closed: u64,
    pub rows: u64,
    pub wear_histogram: Vec<HistogramBin>,
}

pub const WEAR_BIN_MIN: u32 = 15;
pub const WEAR_BINS: u32 = 16;

struct Files {
    rows: File,
    index: File,
    commands: File,
}

struct State {
    meta: SessionMeta,
    counters: IngestCounters,
    rows: Vec<TelemetryRow>,
    /// Byte length of `rows.ndjson` including unflushed rows.
    log_len: u64,
    pending_rows: Vec<u8>,
    pending_index: Vec<u8>,
    pending_count: usize,
    decoder: FrameDecoder,
    seen_gaps: u64,
    last_ts: u32,
    downlink_seq: SeqCounter,
    downlink: VecDeque<Vec<u8>>,
    commands_relayed: u64,
    devices: u32,
    files: Option<Files>,
}

struct Session {
    dir: PathBuf,
    state: RwLock<State>,
    live: broadcast::Sender<LiveEvent>,
    downlink_ready: Arc<Notify>,
}

/// Append-only session store with live fan-out and a command relay.
///
/// Dropping the hub flushes every open session; [`Hub::abort`] drops it
/// without flushing, as a crash would.
pub struct Hub {
    cfg: HubConfig,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    aborted: AtomicBool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HubError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(HubError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HubError::io(path))
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: SessionMeta,
    counters: IngestCounters,
}

fn append_file(path: &Path) -> Result<File, HubError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(HubError::io(path))
}

/// Complete, in-sequence lines at the head of `bytes`, and their byte length.
fn valid_prefix<T: for<'de> Deserialize<'de>>(bytes: &[u8], check: impl Fn(usize, &T) -> bool) -> (Vec<T>, usize) {
    let mut items = Vec::new();
    let mut pos = 0;
    while let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') {
        let Ok(item) = serde_json::from_slice::<T>(&bytes[pos..pos + nl]) else {
            break;
        };
        if !check(items.len(), &item) {
            break;
        }
        items.push(item);
        pos += nl + 1;
    }
    (items, pos)
}

impl Session {
    fn create(dir: PathBuf, meta: SessionMeta, cfg: &HubConfig) -> Result<Self, HubError> {
        fs::create_dir_all(&dir).map_err(HubError::io(&dir))?;
        let state = State::new(meta, IngestCounters::default(), Vec::new(), 0, &dir)?;
        let s = Self::wrap(dir, state, cfg);
        s.write_meta(&s.state.read())?;
        Ok(s)
    }

    fn wrap(dir: PathBuf, state: State, cfg: &HubConfig) -> Self {
        Self {
            dir,
            state: RwLock::new(state),
            live: broadcast::channel(cfg.live_capacity.max(1)).0,
            downlink_ready: Arc::new(Notify::new()),
        }
    }

    /// Reload a session directory, dropping any torn tail and rebuilding the index.
    fn recover(dir: PathBuf, cfg: &HubConfig) -> Result<Self, HubError> {
        let meta_path = dir.join(META);
        let text = fs::read(&meta_path).map_err(HubError::io(&meta_path))?;
        let MetaFile { meta, counters } = serde_json::from_slice(&text).map_err(|e| HubError::Corrupt {
            path: meta_path.display().to_string(),
            message: e.to_string(),
        })?;

        let rows_path = dir.join(ROWS);
        let bytes = fs::read(&rows_path).unwrap_or_default();
        let (rows, valid) = valid_prefix::<TelemetryRow>(&bytes, |i, r| r.n == i as u64);
        if valid < bytes.len() {
            let f = OpenOptions::new().write(true).open(&rows_path).map_err(HubError::io(&rows_path))?;
            f.set_len(valid as u64).map_err(HubError::io(&rows_path))?;
        }
        let mut index = Vec::with_capacity(rows.len() * IndexEntry::LEN);
        let mut offset = 0u64;
        for r in &rows {
            index.extend_from_slice(&entry(r, offset).to_bytes());
            offset += r.to_line().len() as u64;
        }
        write_atomic(&dir.join(INDEX), &index)?;

        let cmd_path = dir.join(COMMANDS);
        let cmd_bytes = fs::read(&cmd_path).unwrap_or_default();
        let (commands, cmd_valid) = valid_prefix::<CommandRecord>(&cmd_bytes, |_, _| true);
        if cmd_valid < cmd_bytes.len() {
            let f = OpenOptions::new().write(true).open(&cmd_path).map_err(HubError::io(&cmd_path))?;
            f.set_len(cmd_valid as u64).map_err(HubError::io(&cmd_path))?;
        }

        let counters = IngestCounters {
            frames: counters.frames.min(rows.len() as u64),
            ..counters
        };
        let mut state = State::new(meta, counters, rows, valid as u64, &dir)?;
        if let Some(last) = commands.last() {
            while state.downlink_seq.peek() != last.seq.wrapping_add(1) {
                state.downlink_seq.next();
            }
        }
        state.commands_relayed = commands.len() as u64;
        if state.meta.is_closed() {
            state.files = None;
        }
        let s = Self::wrap(dir, state, cfg);
        s.write_meta(&s.state.read())?;
        Ok(s)
    }

    fn write_meta(&self, st: &State) -> Result<(), HubError> {
        let file = MetaFile {
            meta: st.meta.clone(),
            counters: st.counters,
        };
        write_atomic(&self.dir.join(META), &serde_json::to_vec_pretty(&file).expect("meta serializes"))
    }

    fn flush(&self, st: &mut State, fsync: bool) -> Result<(), HubError> {
        if st.pending_count > 0 {
            let files = st.files.as_mut().expect("open session has files");
            files.rows.write_all(&st.pending_rows).map_err(HubError::io(&self.dir.join(ROWS)))?;
            files.index.write_all(&st.pending_index).map_err(HubError::io(&self.dir.join(INDEX)))?;
            if fsync {
                files.rows.sync_data().map_err(HubError::io(&self.dir.join(ROWS)))?;
            }
            st.pending_rows.clear();
            st.pending_index.clear();
            st.pending_count = 0;
        }
        self.write_meta(st)
    }
}

fn entry(r: &TelemetryRow, offset: u64) -> IndexEntry {
    IndexEntry {
        offset,
        ts_ms: r.ts_ms,
        seq: r.seq,
        kind: r.kind.to_byte(),
    }
}

impl State {
    fn new(
        meta: SessionMeta,
        counters: IngestCounters,
        rows: Vec<TelemetryRow>,
        log_len: u64,
        dir: &Path,
    ) -> Result<Self, HubError> {
        let files = Files {
            rows: append_file(&dir.join(ROWS))?,
            index: append_file(&dir.join(INDEX))?,
            commands: append_file(&dir.join(COMMANDS))?,
        };
        Ok(Self {
            last_ts: rows.last().map_or(0, |r| r.ts_ms),
            meta,
            counters,
            rows,
            log_len,
            pending_rows: Vec::new(),
            pending_index: Vec::new(),
            pending_count: 0,
            decoder: FrameDecoder::new(),
            seen_gaps: 0,
            downlink_seq: SeqCounter::default(),
            downlink: VecDeque::new(),
            commands_relayed: 0,
            devices: 0,
            files: Some(files),
        })
    }

    fn nack(&mut self, reason: NackReason) -> IngestReply {
        self.counters.nacks += 1;
        match reason {
            NackReason::BadCrc => self.counters.bad_crc += 1,
            NackReason::StorageFull => self.counters.storage_full += 1,
            NackReason::OutOfOrder => self.counters.out_of_order += 1,
            NackReason::Malformed(_) => {}
        }
        IngestReply::Nack {
            reason,
            lost: self.counters.nacks,
        }
    }
}

fn relayable(msg: &Message) -> bool {
    matches!(
        msg,
        Message::MotorCommand { .. }
            | Message::CalibrateCmd
            | Message::HeaterCmd { .. }
            | Message::ModeStatus {
                mode: DeviceMode::Idle | DeviceMode::SelfFitAdjusting
            }
    )
}

impl Hub {
    /// Open the store under `cfg.data_dir`, recovering every session in it.
    pub fn open(cfg: HubConfig) -> Result<Self, HubError> {
        fs::create_dir_all(&cfg.data_dir).map_err(HubError::io(&cfg.data_dir))?;
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        let entries = fs::read_dir(&cfg.data_dir).map_err(HubError::io(&cfg.data_dir))?;
        for e in entries {
            let e = e.map_err(HubError::io(&cfg.data_dir))?;
            let name = e.file_name().to_string_lossy().into_owned();
            let Some(num) = name.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) else {
                continue;
            };
            if !e.path().join(META).exists() {
                continue;
            }
            let s = Session::recover(e.path(), &cfg)?;
            max_id = max_id.max(num);
            sessions.insert(name, Arc::new(s));
        }
        Ok(Self {
            cfg,
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(max_id + 1),
            aborted: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &HubConfig {
        &self.cfg
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, HubError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| HubError::UnknownSession(id.to_string()))
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.cfg.data_dir.join(id)
    }

    pub fn open_session(&self, device_id: &str) -> Result<SessionMeta, HubError> {
        if device_id.is_empty() {
            return Err(HubError::BadRequest("device_id must not be empty".into()));
        }
        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let meta = SessionMeta {
            schema_version: STORE_SCHEMA_VERSION,
            session_id: id.clone(),
            device_id: device_id.to_string(),
            started_at_ms: self.cfg.clock.now_ms(),
            ended_at_ms: None,
        };
        let s = Session::create(self.session_dir(&id), meta.clone(), &self.cfg)?;
        self.sessions.write().insert(id, Arc::new(s));
        Ok(meta)
    }

    /// Flush and seal a session. Closing twice is an error.
    pub fn close_session(&self, id: &str) -> Result<SessionMeta, HubError> {
        let s = self.session(id)?;
        let mut st = s.state.write();
        if st.meta.is_closed() {
            return Err(HubError::SessionClosed(id.to_string()));
        }
        st.meta.ended_at_ms = Some(self.cfg.clock.now_ms());
        s.flush(&mut st, self.cfg.fsync)?;
        st.files = None;
        st.downlink.clear();
        let _ = s.live.send(LiveEvent::Closed);
        Ok(st.meta.clone())
    }

    pub fn sessions(&self) -> Vec<SessionMeta> {
        self.sessions.read().values().map(|s| s.state.read().meta.clone()).collect()
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, HubError> {
        let s = self.session(id)?;
        let st = s.state.read();
        Ok(SessionInfo {
            meta: st.meta.clone(),
            rows: st.rows.len() as u64,
            counters: st.counters,
            device_attached: st.devices > 0,
            commands_relayed: st.commands_relayed,
        })
    }

    /// Feed uplink bytes from a device connection; one reply per frame or
    /// discarded chunk.
    pub fn ingest(&self, id: &str, bytes: &[u8]) -> Result<Vec<IngestReply>, HubError> {
        let s = self.session(id)?;
        let mut st = s.state.write();
        if st.meta.is_closed() {
            return Err(HubError::SessionClosed(id.to_string()));
        }
        let mut replies = Vec::new();
        for ev in st.decoder.feed(bytes) {
            let reply = match ev {
                StreamEvent::Dropped(DecodeError::BadCrc { .. }) => st.nack(NackReason::BadCrc),
                StreamEvent::Dropped(e) => st.nack(NackReason::Malformed(e.to_string())),
                StreamEvent::Frame(d) => {
                    let ts = d.message.timestamp_ms().unwrap_or(st.last_ts);
                    if st.rows.len() as u64 >= self.cfg.max_rows_per_session {
                        st.nack(NackReason::StorageFull)
                    } else if ts < st.last_ts {
                        st.nack(NackReason::OutOfOrder)
                    } else {
                        let row = TelemetryRow {
                            n: st.rows.len() as u64,
                            ts_ms: ts,
                            seq: d.seq,
                            kind: d.message.kind(),
                            payload: d.message,
                        };
                        let line = row.to_line();
                        let e = entry(&row, st.log_len);
                        st.log_len += line.len() as u64;
                        st.pending_rows.extend_from_slice(&line);
                        st.pending_index.extend_from_slice(&e.to_bytes());
                        st.pending_count += 1;
                        st.last_ts = ts;
                        st.counters.frames += 1;
                        let frame = encode_frame(&row.payload, row.seq).expect("decoded frame re-encodes");
                        let _ = s.live.send(LiveEvent::Frame {
                            n: row.n,
                            bytes: frame.into(),
                        });
                        let reply = IngestReply::Ack { seq: row.seq, n: row.n };
                        st.rows.push(row);
                        reply
                    }
                }
            };
            replies.push(reply);
        }
        let gaps = st.decoder.stats().seq_gaps;
        st.counters.seq_gaps += gaps - st.seen_gaps;
        st.seen_gaps = gaps;
        if st.pending_count >= self.cfg.flush_rows.max(1) {
            s.flush(&mut st, self.cfg.fsync)?;
        }
        Ok(replies)
    }

    /// Live stream of stored frames, starting after the current last row.
    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<LiveEvent>, HubError> {
        Ok(self.session(id)?.live.subscribe())
    }

    pub fn attach_device(&self, id: &str) -> Result<(), HubError> {
        let s = self.session(id)?;
        let mut st = s.state.write();
        if st.meta.is_closed() {
            return Err(HubError::SessionClosed(id.to_string()));
        }
        st.devices += 1;
        Ok(())
    }

    pub fn detach_device(&self, id: &str) -> Result<(), HubError> {
        let s = self.session(id)?;
        let mut st = s.state.write();
        st.devices = st.devices.saturating_sub(1);
        Ok(())
    }

    /// Frame a host command and queue it for the attached device.
    pub fn relay_command(&self, id: &str, msg: Message) -> Result<Receipt, HubError> {
        if !relayable(&msg) {
            return Err(HubError::NotACommand(msg.kind()));
        }
        let s = self.session(id)?;
        let mut st = s.state.write();
        if st.meta.is_closed() {
            return Err(HubError::SessionClosed(id.to_string()));
        }
        if st.devices == 0 {
            return Err(HubError::DeviceUnreachable(id.to_string()));
        }
        let seq = st.downlink_seq.peek();
        let frame = encode_frame(&msg, seq).expect("commands fit in a frame");
        let record = CommandRecord {
            seq,
            after_rows: st.rows.len() as u64,
            message: msg.clone(),
        };
        let mut line = serde_json::to_vec(&record).expect("command serializes");
        line.push(b'\n');
        let path = s.dir.join(COMMANDS);
        let files = st.files.as_mut().expect("open session has files");
        files.commands.write_all(&line).map_err(HubError::io(&path))?;
        st.downlink_seq.next();
        st.commands_relayed += 1;
        st.downlink.push_back(frame);
        s.downlink_ready.notify_one();
        Ok(Receipt {
            session_id: id.to_string(),
            seq,
            kind: msg.kind(),
        })
    }

    /// Queued downlink frames, oldest first.
    pub fn take_downlink(&self, id: &str) -> Result<Vec<Vec<u8>>, HubError> {
        let s = self.session(id)?;
        let mut st = s.state.write();
        Ok(st.downlink.drain(..).collect())
    }

    /// Signalled whenever a command is queued for the session.
    pub fn downlink_notify(&self, id: &str) -> Result<Arc<Notify>, HubError> {
        Ok(self.session(id)?.downlink_ready.clone())
    }

    pub fn commands(&self, id: &str) -> Result<Vec<CommandRecord>, HubError> {
        let s = self.session(id)?;
        let path = s.dir.join(COMMANDS);
        let mut bytes = Vec::new();
        if let Ok(mut f) = File::open(&path) {
            f.read_to_end(&mut bytes).map_err(HubError::io(&path))?;
        }
        Ok(valid_prefix::<CommandRecord>(&bytes, |_, _| true).0)
    }

    pub fn query_range(&self, id: &str, q: &RangeQuery) -> Result<RowPage, HubError> {
        let s = self.session(id)?;
        let st = s.state.read();
        let lo = st.rows.partition_point(|r| r.ts_ms < q.t0);
        let hi = st.rows.partition_point(|r| r.ts_ms <= q.t1);
        let limit = q.limit.unwrap_or(usize::MAX);
        let mut matching = st.rows[lo..hi.max(lo)].iter().filter(|r| q.matches(r)).skip(q.offset);
        let rows: Vec<TelemetryRow> = matching.by_ref().take(limit).cloned().collect();
        let next_offset = matching.next().map(|_| q.offset + rows.len());
        Ok(RowPage { rows, next_offset })
    }

    pub fn rows(&self, id: &str) -> Result<Vec<TelemetryRow>, HubError> {
        Ok(self.session(id)?.state.read().rows.clone())
    }

    pub fn device_digest(&self, device_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.cfg.salt.as_bytes());
        h.update([0x1f]);
        h.update(device_id.as_bytes());
        hex::encode(h.finalize())
    }

    /// Closed session with the device id replaced by its salted digest.
    pub fn export_anonymized(&self, id: &str) -> Result<ExportRecord, HubError> {
        let s = self.session(id)?;
        let st = s.state.read();
        let Some(ended_at_ms) = st.meta.ended_at_ms else {
            return Err(HubError::SessionLive(id.to_string()));
        };
        Ok(ExportRecord {
            schema_version: STORE_SCHEMA_VERSION,
            session_id: st.meta.session_id.clone(),
            device_digest: self.device_digest(&st.meta.device_id),
            started_at_ms: st.meta.started_at_ms,
            ended_at_ms,
            row_count: st.rows.len() as u64,
            rows: st.rows.clone(),
        })
    }

    pub fn session_stats(&self, id: &str) -> Result<SessionStats, HubError> {
        let s = self.session(id)?;
        let st = s.state.read();
        let mut kinds = BTreeMap::new();
        let mut alerts = BTreeMap::new();
        let mut color_counts = [0u64; 4];
        let (mut updates, mut all_green) = (0u64, 0u64);
        for r in &st.rows {
            *kinds.entry(r.kind).or_insert(0) += 1;
            match &r.payload {
                Message::Alert { code } => *alerts.entry(*code).or_insert(0) += 1,
                Message::FitStateUpdate { colors } => {
                    updates += 1;
                    for c in colors {
                        color_counts[c.to_wire() as usize] += 1;
                    }
                    all_green += colors.iter().all(|c| *c == FitColor::Green) as u64;
                }
                _ => {}
            }
        }
        let points = color_counts.iter().sum::<u64>().max(1) as f64;
        let share = |c: FitColor| color_counts[c.to_wire() as usize] as f64 / points;
        Ok(SessionStats {
            session_id: id.to_string(),
            rows: st.rows.len() as u64,
            kinds,
            alerts,
            fit: FitSummary {
                updates,
                red: share(FitColor::Red),
                yellow: share(FitColor::Yellow),
                green: share(FitColor::Green),
                dark_gray: share(FitColor::DarkGray),
                all_green: all_green as f64 / updates.max(1) as f64,
            },
            wear_ms: wear_ms(&st.rows),
            counters: st.counters,
        })
    }

    /// Totals and the wear-duration histogram over closed sessions.
    pub fn stats(&self) -> HubStats {
        let sessions: Vec<Arc<Session>> = self.sessions.read().values().cloned().collect();
        let mut bins: Vec<HistogramBin> = (0..WEAR_BINS)
            .map(|i| HistogramBin {
                from_min: i * WEAR_BIN_MIN,
                to_min: (i + 1 < WEAR_BINS).then_some((i + 1) * WEAR_BIN_MIN),
                sessions: 0,
            })
            .collect();
        let (mut closed, mut rows) = (0, 0);
        for s in &sessions {
            let st = s.state.read();
            rows += st.rows.len() as u64;
            if st.meta.is_closed() {
                closed += 1;
                let minutes = (wear_ms(&st.rows) / 60_000) as u32;
                let i = (minutes / WEAR_BIN_MIN).min(WEAR_BINS - 1);
                bins[i as usize].sessions += 1;
            }
        }
        HubStats {
            sessions: sessions.len() as u64,
            closed,
            rows,
            wear_histogram: bins,
        }
    }

    /// Write every buffered row.
    pub fn flush(&self) -> Result<(), HubError> {
        let sessions: Vec<Arc<Session>> = self.sessions.read().values().cloned().collect();
        for s in sessions {
            let mut st = s.state.write();
            if !st.meta.is_closed() {
                s.flush(&mut st, self.cfg.fsync)?;
            }
        }
        Ok(())
    }

    /// Drop the hub as if the process died: buffered rows are discarded.
    pub fn abort(self) {
        self.aborted.store(true, Ordering::SeqCst);
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        if !self.aborted.load(Ordering::SeqCst) {
            if let Err(e) = self.flush() {
                tracing::error!("flush on shutdown failed: {e}");
            }
        }
    }
}

/// Device time between each mode report that entered a wearing mode and the
/// next mode report, or the last row.
fn wear_ms(rows: &[TelemetryRow]) -> u64 {
    let mut total = 0u64;
    let mut since: Option<u32> = None;
    for r in rows {
        if let Message::ModeStatus { mode } = r.payload {
            if let Some(t) = since.take() {
                total += (r.ts_ms - t) as u64;
            }
            if mode.is_wearing() {
                since = Some(r.ts_ms);
            }
        }
    }
    if let (Some(t), Some(last)) = (since, rows.last()) {
        total += (last.ts_ms - t) as u64;
    }
    total
}
