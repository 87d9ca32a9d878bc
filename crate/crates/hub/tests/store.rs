mod common;

use std::fs;
use std::sync::Arc;

use common::{frame, hub, pressure, recorded_frames};
use maskloop_core::protocol::{decode_frame, FrameDecoder, StreamEvent};
use maskloop_core::sim::Simulation;
use maskloop_core::{DeviceMode, FitColor, Message, MessageKind, Motor};
use maskloop_hub::{
    Hub, HubConfig, HubError, HubLink, IndexEntry, IngestReply, LiveEvent, NackReason, RangeQuery, TelemetryRow,
};
use proptest::prelude::*;

fn ingest_all(hub: &Hub, id: &str, frames: &[Vec<u8>]) {
    for f in frames {
        for r in hub.ingest(id, f).unwrap() {
            assert!(matches!(r, IngestReply::Ack { .. }), "{r:?}");
        }
    }
}

/// Decode the recording directly, independent of the hub.
fn expected_rows(frames: &[Vec<u8>]) -> Vec<TelemetryRow> {
    let mut last_ts = 0;
    frames
        .iter()
        .enumerate()
        .map(|(n, f)| {
            let d = decode_frame(f).unwrap();
            last_ts = d.message.timestamp_ms().unwrap_or(last_ts);
            TelemetryRow {
                n: n as u64,
                ts_ms: last_ts,
                seq: d.seq,
                kind: d.message.kind(),
                payload: d.message,
            }
        })
        .collect()
}

#[test]
fn ten_thousand_frame_replay_is_byte_identical() {
    let frames = recorded_frames(10_000);
    let start = std::time::Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());

    let first = hub(a.path());
    let id = first.open_session("dev-aa:bb:cc").unwrap().session_id;
    ingest_all(&first, &id, &frames);
    first.close_session(&id).unwrap();
    assert_eq!(first.rows(&id).unwrap(), expected_rows(&frames));
    drop(first);

    let second = hub(b.path());
    let id2 = second.open_session("dev-aa:bb:cc").unwrap().session_id;
    ingest_all(&second, &id2, &frames);
    second.close_session(&id2).unwrap();
    drop(second);

    for file in ["rows.ndjson", "rows.idx", "meta.json"] {
        let x = fs::read(a.path().join(&id).join(file)).unwrap();
        let y = fs::read(b.path().join(&id2).join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }

    // Reloading the log reproduces the rows and the bytes they came from.
    let reopened = hub(a.path());
    let rows = reopened.rows(&id).unwrap();
    assert_eq!(rows.len(), 10_000);
    let rebuilt: Vec<u8> = rows.iter().flat_map(|r| r.to_line()).collect();
    assert_eq!(rebuilt, fs::read(a.path().join(&id).join("rows.ndjson")).unwrap());
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn index_points_at_each_line() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    ingest_all(&h, &id, &recorded_frames(300));
    h.flush().unwrap();
    let log = fs::read(dir.path().join(&id).join("rows.ndjson")).unwrap();
    let idx = fs::read(dir.path().join(&id).join("rows.idx")).unwrap();
    assert_eq!(idx.len(), 300 * IndexEntry::LEN);
    for (n, chunk) in idx.chunks_exact(IndexEntry::LEN).enumerate() {
        let e = IndexEntry::from_bytes(chunk.try_into().unwrap());
        let line = &log[e.offset as usize..];
        let line = &line[..line.iter().position(|b| *b == b'\n').unwrap()];
        let row: TelemetryRow = serde_json::from_slice(line).unwrap();
        assert_eq!((row.n, row.ts_ms, row.seq, row.kind.to_byte()), (n as u64, e.ts_ms, e.seq, e.kind));
    }
}

#[test]
fn corrupted_frame_is_nacked_and_session_continues() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    ingest_all(&h, &id, &[pressure(0, 0)]);
    let mut bad = pressure(100, 1);
    bad[9] ^= 0x10;
    let replies = h.ingest(&id, &bad).unwrap();
    assert_eq!(replies, vec![IngestReply::Nack { reason: NackReason::BadCrc, lost: 1 }]);
    assert_eq!(h.ingest(&id, &pressure(200, 2)).unwrap(), vec![IngestReply::Ack { seq: 2, n: 1 }]);
    let info = h.session_info(&id).unwrap();
    assert_eq!((info.rows, info.counters.nacks, info.counters.bad_crc), (2, 1, 1));
    assert_eq!(info.counters.seq_gaps, 1);
}

#[test]
fn out_of_order_and_full_sessions_nack() {
    let dir = tempfile::tempdir().unwrap();
    let h = Hub::open(HubConfig { max_rows_per_session: 2, ..common::config(dir.path()) }).unwrap();
    let id = h.open_session("d").unwrap().session_id;
    ingest_all(&h, &id, &[pressure(500, 0)]);
    let r = h.ingest(&id, &pressure(400, 1)).unwrap();
    assert!(matches!(r[0], IngestReply::Nack { reason: NackReason::OutOfOrder, .. }));
    ingest_all(&h, &id, &[frame(&Message::CalibrateCmd, 2)]);
    let r = h.ingest(&id, &pressure(600, 3)).unwrap();
    assert!(matches!(r[0], IngestReply::Nack { reason: NackReason::StorageFull, .. }));
    let rows = h.rows(&id).unwrap();
    assert_eq!(rows[1].ts_ms, 500);
}

#[test]
fn relay_is_ordered_and_framed() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    let tighten = Message::MotorCommand { motor: Motor::Left, step: 1 };
    assert!(matches!(h.relay_command(&id, tighten.clone()), Err(HubError::DeviceUnreachable(_))));
    h.attach_device(&id).unwrap();

    let r1 = h.relay_command(&id, tighten.clone()).unwrap();
    let frames = h.take_downlink(&id).unwrap();
    assert_eq!(frames.len(), 1);
    let d = decode_frame(&frames[0]).unwrap();
    assert_eq!((d.message, d.seq), (tighten.clone(), r1.seq));
    assert_eq!(&frames[0][..9], &[0xA5, 0x01, 0x04, 0x00, 0x00, 0x02, 0x00, 0x00, 0x01]);

    let r2 = h.relay_command(&id, Message::CalibrateCmd).unwrap();
    let r3 = h.relay_command(&id, Message::HeaterCmd { on: true, target_c: 60 }).unwrap();
    assert_eq!((r2.seq, r3.seq), (r1.seq + 1, r1.seq + 2));
    let seqs: Vec<u16> = h.take_downlink(&id).unwrap().iter().map(|f| decode_frame(f).unwrap().seq).collect();
    assert_eq!(seqs, vec![r2.seq, r3.seq]);

    assert!(matches!(
        h.relay_command(&id, Message::Alert { code: maskloop_core::AlertCode::SensorFault }),
        Err(HubError::NotACommand(MessageKind::Alert))
    ));
    h.close_session(&id).unwrap();
    let logged = h.commands(&id).unwrap();
    assert!(matches!(h.relay_command(&id, tighten), Err(HubError::SessionClosed(_))));
    assert_eq!(h.commands(&id).unwrap(), logged);
    assert_eq!(logged.len(), 3);
    assert!(h.take_downlink(&id).unwrap().is_empty());
}

#[test]
fn export_hides_device_id() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let device = "MASK-SN-000417";
    let a = h.open_session(device).unwrap().session_id;
    let b = h.open_session(device).unwrap().session_id;
    ingest_all(&h, &a, &recorded_frames(500));
    assert!(matches!(h.export_anonymized(&a), Err(HubError::SessionLive(_))));
    h.close_session(&a).unwrap();
    h.close_session(&b).unwrap();
    let ea = h.export_anonymized(&a).unwrap();
    let eb = h.export_anonymized(&b).unwrap();
    let text = serde_json::to_string(&ea).unwrap();
    assert!(!text.contains(device));
    assert_eq!(ea.device_digest, eb.device_digest);
    assert_eq!(ea.row_count, 500);
    assert_eq!(ea.rows, h.rows(&a).unwrap());

    let other = tempfile::tempdir().unwrap();
    let salted = Hub::open(HubConfig { salt: "other".into(), ..common::config(other.path()) }).unwrap();
    assert_ne!(salted.device_digest(device), ea.device_digest);
}

#[test]
fn crash_loses_at_most_the_unflushed_batch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HubConfig { flush_rows: 10, ..common::config(dir.path()) };
    let frames = recorded_frames(25);
    let h = Hub::open(cfg.clone()).unwrap();
    let id = h.open_session("d").unwrap().session_id;
    ingest_all(&h, &id, &frames);
    let before = h.rows(&id).unwrap();
    h.abort();

    let h = Hub::open(cfg.clone()).unwrap();
    let after = h.rows(&id).unwrap();
    assert_eq!(after.len(), 20);
    assert_eq!(after[..], before[..20]);
    // The session is still live and keeps numbering from the recovered tail.
    let replies = h.ingest(&id, &frames[20]).unwrap();
    assert_eq!(replies, vec![IngestReply::Ack { seq: 20, n: 20 }]);
    drop(h);

    // A torn final line is cut off on the next start.
    let log = dir.path().join(&id).join("rows.ndjson");
    let mut bytes = fs::read(&log).unwrap();
    let whole = bytes.len();
    bytes.extend_from_slice(b"{\"n\":21,\"ts_ms\":");
    fs::write(&log, &bytes).unwrap();
    let h = Hub::open(cfg).unwrap();
    assert_eq!(h.rows(&id).unwrap().len(), 21);
    assert_eq!(fs::read(&log).unwrap().len(), whole);
    assert_eq!(fs::read(dir.path().join(&id).join("rows.idx")).unwrap().len(), 21 * IndexEntry::LEN);
}

#[test]
fn subscribers_see_ingest_order() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    let mut subs = [h.subscribe(&id).unwrap(), h.subscribe(&id).unwrap()];
    let frames = recorded_frames(200);
    ingest_all(&h, &id, &frames);
    h.close_session(&id).unwrap();
    for sub in &mut subs {
        let mut got = Vec::new();
        while let Ok(ev) = sub.try_recv() {
            got.push(ev);
        }
        assert_eq!(got.last(), Some(&LiveEvent::Closed));
        let frames_seen: Vec<&[u8]> = got
            .iter()
            .filter_map(|e| match e {
                LiveEvent::Frame { bytes, .. } => Some(&bytes[..]),
                LiveEvent::Closed => None,
            })
            .collect();
        assert_eq!(frames_seen, frames.iter().map(|f| &f[..]).collect::<Vec<_>>());
    }
}

#[test]
fn sessions_ingest_concurrently() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let frames = Arc::new(recorded_frames(2000));
    let ids: Vec<String> = (0..4).map(|i| h.open_session(&format!("d{i}")).unwrap().session_id).collect();
    std::thread::scope(|s| {
        for id in &ids {
            let (h, frames) = (h.clone(), frames.clone());
            s.spawn(move || ingest_all(&h, id, &frames));
        }
        let h = h.clone();
        s.spawn(move || {
            for _ in 0..50 {
                for id in &["s000001", "s000002"] {
                    let page = h.query_range(id, &RangeQuery::all()).unwrap();
                    assert!(page.rows.windows(2).all(|w| w[1].n == w[0].n + 1));
                }
            }
        });
    });
    let expected = expected_rows(&frames);
    for id in &ids {
        assert_eq!(h.rows(id).unwrap(), expected);
    }
}

#[test]
fn stream_chunks_are_reassembled() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    let frames = recorded_frames(50);
    let stream: Vec<u8> = frames.concat();
    let mut acks = 0;
    for chunk in stream.chunks(7) {
        acks += h.ingest(&id, chunk).unwrap().len();
    }
    assert_eq!(acks, 50);
    assert_eq!(h.rows(&id).unwrap(), expected_rows(&frames));
}

#[test]
fn stats_summarize_fit_and_wear() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    let msgs = [
        pressure(0, 0),
        frame(&Message::ModeStatus { mode: DeviceMode::SelfFitAdjusting }, 1),
        frame(&Message::FitStateUpdate { colors: [FitColor::Green; 8] }, 2),
        frame(&Message::FitStateUpdate { colors: [FitColor::Red, FitColor::Green, FitColor::Green, FitColor::Green, FitColor::Green, FitColor::Green, FitColor::Green, FitColor::Green] }, 3),
        pressure(60_000 * 20, 4),
        frame(&Message::ModeStatus { mode: DeviceMode::DoffAlerted }, 5),
    ];
    ingest_all(&h, &id, &msgs);
    let s = h.session_stats(&id).unwrap();
    assert_eq!(s.wear_ms, 60_000 * 20);
    assert_eq!(s.fit.updates, 2);
    assert!((s.fit.all_green - 0.5).abs() < 1e-12);
    assert!((s.fit.red - 1.0 / 16.0).abs() < 1e-12);
    assert_eq!(s.kinds[&MessageKind::FitStateUpdate], 2);
    h.close_session(&id).unwrap();
    let hs = h.stats();
    assert_eq!((hs.sessions, hs.closed, hs.rows), (1, 1, 6));
    assert_eq!(hs.wear_histogram[1].sessions, 1);
    assert_eq!(hs.wear_histogram.iter().map(|b| b.sessions).sum::<u64>(), 1);
}

#[test]
fn hub_in_the_loop_matches_loopback() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let link = HubLink::open(h.clone(), "twin").unwrap();
    let id = link.session_id().to_string();
    let sc = common::golden();
    let via_hub = Simulation::with_link(sc.clone(), link).unwrap().run().unwrap();
    let direct = Simulation::new(sc).unwrap().run().unwrap();
    assert_eq!(via_hub.rows, direct.rows);
    assert_eq!(h.rows(&id).unwrap().len() as u64, via_hub.summary.frames_up);
    let mut dec = FrameDecoder::new();
    for f in h.take_downlink(&id).unwrap() {
        assert!(matches!(dec.feed(&f)[..], [StreamEvent::Frame(_)]));
    }
}

fn arb_query() -> impl Strategy<Value = RangeQuery> {
    let kinds = prop::option::of(prop::sample::subsequence(MessageKind::ALL.to_vec(), 0..=9));
    (0u32..300_000, 0u32..300_000, kinds).prop_map(|(a, b, kinds)| RangeQuery {
        t0: a.min(b),
        t1: a.max(b),
        kinds,
        ..RangeQuery::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pages_concatenate_to_linear_scan(q in arb_query(), page in 1usize..700) {
        thread_local! {
            static FIXTURE: (tempfile::TempDir, Arc<Hub>, String) = {
                let dir = tempfile::tempdir().unwrap();
                let h = hub(dir.path());
                let id = h.open_session("d").unwrap().session_id;
                ingest_all(&h, &id, &recorded_frames(3000));
                (dir, h, id)
            };
        }
        FIXTURE.with(|(_, h, id)| {
            let all = h.rows(id).unwrap();
            let oracle: Vec<TelemetryRow> = all.iter().filter(|r| q.matches(r)).cloned().collect();
            let mut got = Vec::new();
            let mut offset = Some(0);
            while let Some(o) = offset {
                let p = h.query_range(id, &RangeQuery { offset: o, limit: Some(page), ..q.clone() }).unwrap();
                prop_assert!(p.rows.len() <= page);
                got.extend(p.rows);
                offset = p.next_offset;
            }
            prop_assert_eq!(got, oracle);
            Ok(())
        })?;
    }
}

#[test]
fn empty_and_full_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let h = hub(dir.path());
    let id = h.open_session("d").unwrap().session_id;
    ingest_all(&h, &id, &recorded_frames(100));
    let all = h.rows(&id).unwrap();
    assert_eq!(h.query_range(&id, &RangeQuery::all()).unwrap().rows, all);
    let last = all.last().unwrap().ts_ms;
    let past = RangeQuery { t0: last + 1, t1: u32::MAX, ..RangeQuery::default() };
    assert!(h.query_range(&id, &past).unwrap().rows.is_empty());
    let none = RangeQuery { kinds: Some(vec![]), ..RangeQuery::all() };
    assert!(h.query_range(&id, &none).unwrap().rows.is_empty());
    assert!(matches!(h.query_range("s999999", &RangeQuery::all()), Err(HubError::UnknownSession(_))));
}
