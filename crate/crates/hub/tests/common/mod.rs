#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use maskloop_core::protocol::encode_frame;
use maskloop_core::scenario::{Phase, Scenario};
use maskloop_core::sim::{Link, LoopbackLink, SimError, Simulation};
use maskloop_core::{ActivityKind, Message};
use maskloop_hub::{Clock, Hub, HubConfig};

/// Link that keeps every uplink frame.
#[derive(Default)]
pub struct Recorder {
    inner: LoopbackLink,
    pub frames: Vec<Vec<u8>>,
}

impl Link for Recorder {
    fn uplink(&mut self, frame: &[u8]) -> Result<(), SimError> {
        self.frames.push(frame.to_vec());
        self.inner.uplink(frame)
    }
    fn send_command(&mut self, msg: Message) -> Result<(), SimError> {
        self.inner.send_command(msg)
    }
    fn downlink(&mut self) -> Vec<Vec<u8>> {
        self.inner.downlink()
    }
}

pub fn golden() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden.toml");
    Scenario::from_file(&path).unwrap()
}

/// The first `n` device frames of a long simulated wear.
pub fn recorded_frames(n: usize) -> Vec<Vec<u8>> {
    let mut sc = golden();
    sc.timeline = vec![
        Phase::Calibrate { timeout_s: 10.0 },
        Phase::Don { settle_s: 20.0 },
        Phase::Wear {
            duration_s: 1800.0,
            activity: ActivityKind::NormalBreathing,
            amplitude_mm: None,
            period_s: None,
            breath_rate: None,
            tidal_volume_l: None,
        },
    ];
    let mut sim = Simulation::with_link(sc, Recorder::default()).unwrap().without_rows();
    while sim.link().frames.len() < n && sim.step().unwrap() {}
    let mut frames = std::mem::take(&mut sim.link_mut().frames);
    assert!(frames.len() >= n, "run ended after {} frames", frames.len());
    frames.truncate(n);
    frames
}

pub fn config(dir: &Path) -> HubConfig {
    HubConfig {
        salt: "study-7".into(),
        fsync: false,
        clock: Clock::Fixed(1_700_000_000_000),
        ..HubConfig::new(dir)
    }
}

pub fn hub(dir: &Path) -> Arc<Hub> {
    Arc::new(Hub::open(config(dir)).unwrap())
}

pub fn frame(msg: &Message, seq: u16) -> Vec<u8> {
    encode_frame(msg, seq).unwrap()
}

pub fn pressure(ts_ms: u32, seq: u16) -> Vec<u8> {
    frame(&Message::PressureFrame { ts_ms, codes: [seq as i16; 8] }, seq)
}
