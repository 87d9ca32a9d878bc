//! The closed loop: seal plant, sensing front ends, firmware and a framed
//! link, advanced one control period at a time.
//!
//! Every source of randomness is a ChaCha stream seeded from the scenario, so
//! a scenario and seed fully determine a run.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::Serialize;
use thiserror::Error;

use crate::firmware::{
    DesorbController, DeviceConfig, EnergyLedger, Firmware, FirmwareError, FirmwareInput, MotorCommand,
    SensorLayout, SensorReadings, Transition,
};
use crate::params::ModelParams;
use crate::protocol::{encode_frame, FrameDecoder, Message, SeqCounter, StreamEvent, SLACK_STEP};
use crate::scenario::{HostAction, Phase, Scenario, Staircase};
use crate::seal::{
    apply_activity, fit_factor, humidity_step, ActivityKind, ActivityScenario, Environment, SealState, Side,
    POINTS,
};
use crate::sensor::{
    bridge_output, cdc_convert, heater_temperature, lig_step, sponge_capacitance, surface_relative_humidity,
    HeaterParams, LigSensorState,
};
use crate::types::{AlertCode, DeviceMode, FitColor, Motor};

/// Version of the trace and summary layouts.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

/// Relaxation time of in-mask air toward ambient once the respirator is off, s.
const UNWORN_RELAX_S: f64 = 5.0;

/// Longest wait for the device to finish desorbing after an unscheduled doff, s.
const IMPLICIT_DOFF_CAP_S: f64 = 1800.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("fit did not converge within {budget} ticks of donning (tensions {tension_left:.2} N / {tension_right:.2} N, colors {colors})")]
    NonConvergence {
        budget: u32,
        tension_left: f64,
        tension_right: f64,
        colors: String,
    },
    #[error("calibration did not complete within {timeout_s} s (device mode {mode})")]
    CalibrationTimeout { timeout_s: f64, mode: DeviceMode },
    #[error("fit test needs exercises for {0}")]
    MissingExercises(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Firmware(#[from] FirmwareError),
    #[error("link: {0}")]
    Link(String),
}

/// Transport between the device and whatever stands in for the phone.
pub trait Link {
    /// A frame sent by the device.
    fn uplink(&mut self, frame: &[u8]) -> Result<(), SimError>;
    /// A command issued by the app user; the link frames and queues it.
    fn send_command(&mut self, msg: Message) -> Result<(), SimError>;
    /// Frames waiting for the device, oldest first.
    fn downlink(&mut self) -> Vec<Vec<u8>>;
}

/// In-process link: commands are framed with their own sequence counter and
/// device frames are decoded back for inspection.
#[derive(Debug, Default)]
pub struct LoopbackLink {
    host_seq: SeqCounter,
    queue: VecDeque<Vec<u8>>,
    decoder: FrameDecoder,
    record: bool,
    frames_up: u64,
    bytes_up: u64,
    received: Vec<Message>,
}

impl LoopbackLink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keep every decoded device message.
    pub fn recording() -> Self {
        Self {
            record: true,
            ..Self::default()
        }
    }

    pub fn received(&self) -> &[Message] {
        &self.received
    }

    pub fn frames_up(&self) -> u64 {
        self.frames_up
    }

    pub fn bytes_up(&self) -> u64 {
        self.bytes_up
    }

    pub fn decoder(&self) -> &FrameDecoder {
        &self.decoder
    }
}

impl Link for LoopbackLink {
    fn uplink(&mut self, frame: &[u8]) -> Result<(), SimError> {
        self.frames_up += 1;
        self.bytes_up += frame.len() as u64;
        for ev in self.decoder.feed(frame) {
            match ev {
                StreamEvent::Frame(d) if self.record => self.received.push(d.message),
                StreamEvent::Frame(_) => {}
                StreamEvent::Dropped(e) => return Err(SimError::Link(e.to_string())),
            }
        }
        Ok(())
    }

    fn send_command(&mut self, msg: Message) -> Result<(), SimError> {
        let frame = encode_frame(&msg, self.host_seq.next()).map_err(|e| SimError::Link(e.to_string()))?;
        self.queue.push_back(frame);
        Ok(())
    }

    fn downlink(&mut self) -> Vec<Vec<u8>> {
        self.queue.drain(..).collect()
    }
}

/// One control period of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub tick: u64,
    pub t_s: f64,
    pub phase: &'static str,
    pub exercise: Option<ActivityKind>,
    pub worn: bool,
    pub tension_left: f64,
    pub tension_right: f64,
    pub pressure_kpa: [f64; POINTS],
    pub colors: [FitColor; POINTS],
    pub rh_in: f64,
    pub lig_change: f64,
    pub heater_c: f64,
    pub ff: f64,
    pub mode: DeviceMode,
}

impl TraceRow {
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["tick", "t_s", "phase", "exercise", "worn", "tension_left_n", "tension_right_n"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..POINTS).map(|i| format!("p{i}_kpa")));
        h.extend((0..POINTS).map(|i| format!("c{i}")));
        h.extend(["rh_in", "lig_dr_r0", "heater_c", "ff", "mode"].iter().map(|s| s.to_string()));
        h
    }

    /// Fixed-precision fields matching [`TraceRow::csv_header`].
    pub fn csv_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.tick.to_string(),
            format!("{:.1}", self.t_s),
            self.phase.to_string(),
            self.exercise.map_or(String::new(), |k| k.as_str().to_string()),
            (self.worn as u8).to_string(),
            format!("{:.3}", self.tension_left),
            format!("{:.3}", self.tension_right),
        ];
        f.extend(self.pressure_kpa.iter().map(|p| format!("{p:.3}")));
        f.extend(self.colors.iter().map(|c| c.as_str().to_string()));
        f.push(format!("{:.5}", self.rh_in));
        f.push(format!("{:.5}", self.lig_change));
        f.push(format!("{:.2}", self.heater_c));
        f.push(format!("{:.4}", self.ff));
        f.push(self.mode.as_str().to_string());
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExerciseSummary {
    pub kind: ActivityKind,
    pub ticks: u64,
    /// Arithmetic mean of the per-tick fit factor.
    pub ff_mean: f64,
    pub ff_min: f64,
    pub ff_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlertEvent {
    pub tick: u64,
    pub code: AlertCode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub autofit: bool,
    pub ticks: u64,
    pub duration_s: f64,
    /// Ticks from donning until the device settled on an all-green fit.
    pub converged_after_ticks: Option<u64>,
    pub exercises: Vec<ExerciseSummary>,
    pub final_mode: DeviceMode,
    pub transitions: Vec<Transition>,
    pub alerts: Vec<AlertEvent>,
    pub energy: EnergyLedger,
    pub rh_in_max: f64,
    pub motor_commands: u64,
    pub rejected_host_commands: u64,
    pub frames_up: u64,
    pub staircase: Option<StaircaseResult>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PhaseEnd {
    Ticks(u64),
    Calibrated { deadline: u64, timeout_s: f64 },
    /// Until the device is idle again, or the deadline.
    DeviceIdle(u64),
}

/// The twin: plant, sensors, firmware and link.
pub struct Simulation<L: Link = LoopbackLink> {
    sc: Scenario,
    model: ModelParams,
    dt: f64,
    link: L,
    rng: ChaCha8Rng,
    pressure_noise: Normal<f64>,
    humidity_noise: Normal<f64>,
    fw: Firmware,
    seal: SealState,
    env: Environment,
    lig: LigSensorState,
    heater_v: f64,
    worn: bool,
    activity: ActivityScenario,
    activity_t0: f64,
    tick: u64,
    dev_seq: SeqCounter,
    dev_decoder: FrameDecoder,
    timeline: Vec<Phase>,
    phase_idx: usize,
    phase_end: Option<PhaseEnd>,
    next_command: usize,
    don_tick: Option<u64>,
    converged_tick: Option<u64>,
    doff_at: Option<u64>,
    check_convergence: bool,
    inputs: Option<Vec<FirmwareInput>>,
    rows: Vec<TraceRow>,
    keep_rows: bool,
    stats: Stats,
}

#[derive(Debug, Default)]
struct Stats {
    alerts: Vec<AlertEvent>,
    motor_commands: u64,
    rejected: u64,
    frames_up: u64,
    rh_in_max: f64,
    ff_sums: Vec<(ActivityKind, u64, f64, f64, f64)>,
}

impl Simulation<LoopbackLink> {
    pub fn new(sc: Scenario) -> Result<Self, SimError> {
        Self::with_link(sc, LoopbackLink::new())
    }
}

impl<L: Link> Simulation<L> {
    pub fn with_link(sc: Scenario, link: L) -> Result<Self, SimError> {
        let model = sc.model.clone();
        model.validate().map_err(SimError::Model)?;
        let dt = sc.device.tick_period_s;
        let layout = SensorLayout::from(&sc.face);
        let fw = Firmware::new(sc.device.clone(), model.hardware(), layout)?;
        let env = sc.environment;
        let lig = LigSensorState {
            occupancy: model.lig.steady_occupancy(env.ambient_rh, env.ambient_t),
            ..model.lig
        };
        let normal = |s: f64| Normal::new(0.0, s).map_err(|e| SimError::Model(e.to_string()));
        let pressure_noise = normal(model.noise.pressure_code_std)?;
        let humidity_noise = normal(model.noise.humidity_code_std)?;
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            timeline: sc.timeline.clone(),
            check_convergence: sc.autofit,
            seal: SealState::new(0.0),
            model,
            dt,
            link,
            pressure_noise,
            humidity_noise,
            fw,
            env,
            lig,
            heater_v: 0.0,
            worn: false,
            activity: ActivityScenario::normal(),
            activity_t0: 0.0,
            tick: 0,
            dev_seq: SeqCounter::default(),
            dev_decoder: FrameDecoder::new(),
            phase_idx: 0,
            phase_end: None,
            next_command: 0,
            don_tick: None,
            converged_tick: None,
            doff_at: None,
            inputs: None,
            rows: Vec::new(),
            keep_rows: true,
            stats: Stats::default(),
            sc,
        };
        if !sim.sc.autofit {
            sim.link.send_command(Message::ModeStatus { mode: DeviceMode::Idle })?;
        }
        Ok(sim)
    }

    /// Record every firmware input for later replay.
    pub fn record_inputs(mut self) -> Self {
        self.inputs = Some(Vec::new());
        self
    }

    /// Drop per-tick rows (the summary is still complete).
    pub fn without_rows(mut self) -> Self {
        self.keep_rows = false;
        self
    }

    pub fn firmware(&self) -> &Firmware {
        &self.fw
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn seal(&self) -> &SealState {
        &self.seal
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn firmware_inputs(&self) -> Option<&[FirmwareInput]> {
        self.inputs.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.phase_idx >= self.timeline.len()
    }

    fn ticks_for(&self, seconds: f64) -> u64 {
        (seconds / self.dt).round().max(1.0) as u64
    }

    fn now_s(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    fn issue(&mut self, action: HostAction, target_c: Option<u8>) -> Result<(), SimError> {
        let motor = |motor, step| Message::MotorCommand { motor, step };
        let msg = match action {
            HostAction::TightenLeft => motor(Motor::Left, 1),
            HostAction::TightenRight => motor(Motor::Right, 1),
            HostAction::LoosenLeft => motor(Motor::Left, -1),
            HostAction::LoosenRight => motor(Motor::Right, -1),
            HostAction::SlackLeft => motor(Motor::Left, SLACK_STEP),
            HostAction::SlackRight => motor(Motor::Right, SLACK_STEP),
            HostAction::Calibrate => Message::CalibrateCmd,
            HostAction::AutofitOn => Message::ModeStatus {
                mode: DeviceMode::SelfFitAdjusting,
            },
            HostAction::AutofitOff => Message::ModeStatus { mode: DeviceMode::Idle },
            HostAction::HeaterOn => Message::HeaterCmd {
                on: true,
                target_c: target_c.unwrap_or(self.sc.device.desorb_target_c.round().clamp(0.0, 255.0) as u8),
            },
            HostAction::HeaterOff => Message::HeaterCmd { on: false, target_c: 0 },
        };
        self.link.send_command(msg)
    }

    fn put_on(&mut self) {
        if !self.worn {
            let t0 = self.sc.straps.initial_tension_n.min(self.sc.straps.tension_max_n);
            self.seal.tension_left = t0;
            self.seal.tension_right = t0;
            self.worn = true;
        }
        if self.don_tick.is_none() {
            self.don_tick = Some(self.tick);
        }
    }

    fn begin_phase(&mut self) -> Result<(), SimError> {
        let phase = self.timeline[self.phase_idx].clone();
        let end = match &phase {
            Phase::Calibrate { timeout_s } => {
                self.link.send_command(Message::CalibrateCmd)?;
                PhaseEnd::Calibrated {
                    deadline: self.tick + self.ticks_for(*timeout_s),
                    timeout_s: *timeout_s,
                }
            }
            Phase::Doff { duration_s } => {
                self.worn = false;
                PhaseEnd::Ticks(self.tick + self.ticks_for(*duration_s))
            }
            worn => {
                self.put_on();
                self.activity = worn.activity().expect("worn phase has an activity");
                self.activity_t0 = self.now_s();
                PhaseEnd::Ticks(self.tick + self.ticks_for(worn.duration_s().expect("timed phase")))
            }
        };
        self.phase_end = Some(end);
        Ok(())
    }

    /// Close finished phases and open the next; returns false once the
    /// timeline is exhausted.
    fn advance_timeline(&mut self) -> Result<bool, SimError> {
        loop {
            if self.is_finished() {
                return Ok(false);
            }
            let Some(end) = self.phase_end else {
                self.begin_phase()?;
                continue;
            };
            let done = match end {
                PhaseEnd::Ticks(t) => self.tick >= t,
                PhaseEnd::Calibrated { deadline, timeout_s } => {
                    if self.fw.calibration().is_some() && self.fw.mode() == DeviceMode::SelfFitAdjusting {
                        true
                    } else if self.tick >= deadline {
                        return Err(SimError::CalibrationTimeout {
                            timeout_s,
                            mode: self.fw.mode(),
                        });
                    } else {
                        false
                    }
                }
                PhaseEnd::DeviceIdle(deadline) => self.fw.mode() == DeviceMode::Idle || self.tick >= deadline,
            };
            if !done {
                return Ok(true);
            }
            self.phase_idx += 1;
            self.phase_end = None;
        }
    }

    /// The wearer takes the respirator off in reaction to an alert.
    fn wearer_doffs(&mut self) {
        self.worn = false;
        self.doff_at = None;
        let next = (self.phase_idx + 1..self.timeline.len()).find(|&i| matches!(self.timeline[i], Phase::Doff { .. }));
        match next {
            Some(i) => {
                self.phase_idx = i;
                self.phase_end = None;
            }
            None => {
                self.timeline.truncate(self.phase_idx + 1);
                self.timeline.push(Phase::Doff {
                    duration_s: IMPLICIT_DOFF_CAP_S,
                });
                self.phase_idx += 1;
                self.phase_end = Some(PhaseEnd::DeviceIdle(self.tick + self.ticks_for(IMPLICIT_DOFF_CAP_S)));
            }
        }
    }

    fn deliver_downlink(&mut self) {
        for frame in self.link.downlink() {
            for ev in self.dev_decoder.feed(&frame) {
                if let StreamEvent::Frame(d) = ev {
                    if let Some(inputs) = &mut self.inputs {
                        inputs.push(FirmwareInput::Host(d.message.clone()));
                    }
                    if self.fw.handle_host(&d.message).is_err() {
                        self.stats.rejected += 1;
                    }
                }
            }
        }
    }

    fn advance_plant(&mut self) -> Result<f64, SimError> {
        let offsets = if self.worn {
            apply_activity(&self.sc.face, &self.activity, self.now_s() - self.activity_t0)
        } else {
            [0.0; POINTS]
        };
        if self.worn {
            self.seal.settle(&self.sc.face, &self.model.seal, &offsets);
        } else {
            self.seal.contact_pressure = [0.0; POINTS];
            self.seal.gap_area = [self.model.seal.max_gap_area; POINTS];
        }
        self.seal.time = self.now_s();

        let ff = if self.worn {
            let ff = fit_factor(&self.env, &self.model.seal, &self.seal.gap_area, &self.activity);
            self.env = humidity_step(&self.env, &self.model.seal, &self.seal.gap_area, &self.activity, self.dt);
            ff
        } else {
            let k = self.dt / UNWORN_RELAX_S;
            self.env.rh_in += k * (self.env.ambient_rh - self.env.rh_in);
            self.env.in_mask_particle_conc = self.env.ambient_particle_conc;
            1.0
        };
        self.stats.rh_in_max = self.stats.rh_in_max.max(self.env.rh_in);

        let (_, heater_c) = heater_temperature(&self.model.heater, self.heater_v).map_err(|e| SimError::Model(e.to_string()))?;
        let surface_rh = surface_relative_humidity(self.env.rh_in, self.env.ambient_t, heater_c);
        self.lig = step_lig(&self.lig, surface_rh, heater_c, self.dt)?;
        Ok(ff)
    }

    fn read_sensors(&mut self) -> Result<SensorReadings, SimError> {
        let m = &self.model;
        let mut codes = [0i16; POINTS];
        for (i, code) in codes.iter_mut().enumerate() {
            let force = self.seal.contact_pressure[i] * 1000.0 * m.sponge.plate_area;
            let c = sponge_capacitance(&m.sponge, force, 0).map_err(|e| SimError::Model(e.to_string()))?;
            let noise = self.rng.sample(self.pressure_noise).round() as i32;
            *code = (cdc_convert(&m.cdc, c) + noise).clamp(i16::MIN as i32, i16::MAX as i32) as i16;
        }
        let v = bridge_output(&m.bridge, self.lig.resistance()).map_err(|e| SimError::Model(e.to_string()))?;
        let noise = self.rng.sample(self.humidity_noise).round() as i32;
        let humidity_code = (m.bridge.adc_code(v) as i32 + noise).clamp(0, u16::MAX as i32) as u16;
        Ok(SensorReadings {
            ts_ms: (self.tick as f64 * self.dt * 1000.0).round() as u32,
            pressure_codes: codes,
            humidity_code,
        })
    }

    fn actuate(&mut self, motors: &[MotorCommand]) {
        let straps = self.sc.straps;
        for m in motors {
            let side = match m.motor {
                Motor::Left => Side::Left,
                Motor::Right => Side::Right,
            };
            let t = self.seal.tension_mut(side);
            *t = if m.is_slack() {
                0.0
            } else {
                (*t + m.step as f64 * straps.tension_per_step_n).clamp(0.0, straps.tension_max_n)
            };
        }
        self.stats.motor_commands += motors.len() as u64;
    }

    /// Advance one tick. Returns false once the timeline has completed.
    pub fn step(&mut self) -> Result<bool, SimError> {
        while let Some(c) = self.sc.commands.get(self.next_command).copied() {
            if c.at_s > self.now_s() + 1e-9 {
                break;
            }
            self.issue(c.send, c.target_c)?;
            self.next_command += 1;
        }
        if self.doff_at.is_some_and(|t| self.tick >= t) {
            self.wearer_doffs();
        }
        if !self.advance_timeline()? {
            return Ok(false);
        }

        self.deliver_downlink();
        let ff = self.advance_plant()?;
        let readings = self.read_sensors()?;
        if let Some(inputs) = &mut self.inputs {
            inputs.push(FirmwareInput::Tick(readings));
        }
        let out = self.fw.tick(&readings);
        self.actuate(&out.motors);
        self.heater_v = out.heater_voltage;
        for msg in &out.to_host {
            if let Message::Alert { code } = msg {
                self.stats.alerts.push(AlertEvent { tick: self.tick, code: *code });
                if *code == AlertCode::HumidityDoff && self.worn && self.sc.wearer.doff_on_alert {
                    self.doff_at = Some(self.tick + self.ticks_for(self.sc.wearer.reaction_s.max(self.dt)));
                }
            }
            let frame = encode_frame(msg, self.dev_seq.next()).map_err(|e| SimError::Link(e.to_string()))?;
            self.link.uplink(&frame)?;
            self.stats.frames_up += 1;
        }

        self.record_row(ff);
        self.track_convergence()?;
        self.tick += 1;
        Ok(true)
    }

    fn record_row(&mut self, ff: f64) {
        let phase = &self.timeline[self.phase_idx];
        let (label, exercise) = match phase {
            Phase::Calibrate { .. } => ("calibrate", None),
            Phase::Don { .. } => ("don", None),
            Phase::Exercise { activity, .. } => ("exercise", Some(*activity)),
            Phase::Wear { .. } => ("wear", None),
            Phase::Doff { .. } => ("doff", None),
        };
        if let (Some(kind), true) = (exercise, self.worn) {
            match self.stats.ff_sums.iter_mut().find(|e| e.0 == kind) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += ff;
                    e.3 = e.3.min(ff);
                    e.4 = e.4.max(ff);
                }
                None => self.stats.ff_sums.push((kind, 1, ff, ff, ff)),
            }
        }
        if !self.keep_rows {
            return;
        }
        self.rows.push(TraceRow {
            tick: self.tick,
            t_s: self.now_s(),
            phase: label,
            exercise,
            worn: self.worn,
            tension_left: self.seal.tension_left,
            tension_right: self.seal.tension_right,
            pressure_kpa: self.seal.contact_pressure,
            colors: *self.fw.colors(),
            rh_in: self.env.rh_in,
            lig_change: self.lig.normalized_change(),
            heater_c: self.fw.heater_temp_c(),
            ff,
            mode: self.fw.mode(),
        });
    }

    fn track_convergence(&mut self) -> Result<(), SimError> {
        let Some(don) = self.don_tick else {
            return Ok(());
        };
        if self.converged_tick.is_none() && self.fw.mode() == DeviceMode::HumidityMonitoring {
            self.converged_tick = Some(self.tick);
        }
        let budget = self.sc.tick_budget;
        if self.check_convergence && self.converged_tick.is_none() && self.tick - don >= budget as u64 {
            return Err(self.non_convergence());
        }
        Ok(())
    }

    fn non_convergence(&self) -> SimError {
        SimError::NonConvergence {
            budget: self.sc.tick_budget,
            tension_left: self.seal.tension_left,
            tension_right: self.seal.tension_right,
            colors: self.fw.colors().iter().map(|c| c.as_str()).collect::<Vec<_>>().join(","),
        }
    }

    /// Ticks from donning to the settled all-green fit.
    pub fn converged_after_ticks(&self) -> Option<u64> {
        Some(self.converged_tick? - self.don_tick?)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            schema_version: OUTPUT_SCHEMA_VERSION,
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            autofit: self.sc.autofit,
            ticks: self.tick,
            duration_s: self.now_s(),
            converged_after_ticks: self.converged_after_ticks(),
            exercises: self
                .stats
                .ff_sums
                .iter()
                .map(|&(kind, n, sum, min, max)| ExerciseSummary {
                    kind,
                    ticks: n,
                    ff_mean: sum / n as f64,
                    ff_min: min,
                    ff_max: max,
                })
                .collect(),
            final_mode: self.fw.mode(),
            transitions: self.fw.transitions().to_vec(),
            alerts: self.stats.alerts.clone(),
            energy: self.fw.energy().clone(),
            rh_in_max: self.stats.rh_in_max,
            motor_commands: self.stats.motor_commands,
            rejected_host_commands: self.stats.rejected,
            frames_up: self.stats.frames_up,
            staircase: None,
        }
    }

    /// Run the timeline to completion.
    pub fn run(mut self) -> Result<RunOutcome, SimError> {
        while self.step()? {}
        self.finish()
    }

    /// Close out a run whose [`Simulation::step`] returned false.
    pub fn finish(mut self) -> Result<RunOutcome, SimError> {
        if self.check_convergence && self.don_tick.is_some() && self.converged_tick.is_none() {
            return Err(self.non_convergence());
        }
        let mut summary = self.summary();
        if let Some(st) = &self.sc.staircase {
            summary.staircase = Some(humidity_staircase(&self.model.lig, &self.model.heater, st, self.dt)?);
        }
        Ok(RunOutcome {
            rows: std::mem::take(&mut self.rows),
            summary,
        })
    }
}

/// One tick of the humidity element, split into stable explicit sub-steps.
pub fn step_lig(lig: &LigSensorState, rh: f64, temp_c: f64, dt: f64) -> Result<LigSensorState, SimError> {
    let n = (dt / (0.5 * lig.max_stable_dt(rh, temp_c))).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = *lig;
    for _ in 0..n {
        s = lig_step(&s, rh, temp_c, h).map_err(|e| SimError::Model(e.to_string()))?.0;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaircasePlateau {
    pub rh: f64,
    /// ΔR/R₀ at the end of the humid step.
    pub plateau_change: f64,
    /// ΔR/R₀ at the end of the following purge.
    pub post_purge_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaircaseResult {
    pub purge_temp_c: f64,
    pub plateaus: Vec<StaircasePlateau>,
}

/// Bare-element humidity staircase with heated dry purges in between.
pub fn humidity_staircase(
    lig: &LigSensorState,
    heater: &HeaterParams,
    st: &Staircase,
    dt: f64,
) -> Result<StaircaseResult, SimError> {
    let v = heater.voltage_for(st.purge_c);
    let (_, purge_temp) = heater_temperature(heater, v).map_err(|e| SimError::Model(e.to_string()))?;
    let mut s = LigSensorState { occupancy: 0.0, ..*lig };
    let steps = |secs: f64| (secs / dt).round().max(1.0) as usize;
    let mut plateaus = Vec::new();
    for &rh in &st.levels {
        for _ in 0..steps(st.step_s) {
            s = step_lig(&s, rh, heater.ambient_t, dt)?;
        }
        let plateau_change = s.normalized_change();
        for _ in 0..steps(st.purge_s) {
            s = step_lig(&s, 0.0, purge_temp, dt)?;
        }
        plateaus.push(StaircasePlateau {
            rh,
            plateau_change,
            post_purge_change: s.normalized_change(),
        });
    }
    Ok(StaircaseResult {
        purge_temp_c: purge_temp,
        plateaus,
    })
}

/// Sample of a sealed long wear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WearSample {
    pub t_s: f64,
    pub rh_in: f64,
    pub lig_change: f64,
}

/// In-mask humidity and element response for a sealed respirator with
/// quiet breathing, sampled every `sample_s`.
pub fn sealed_wear_trace(
    model: &ModelParams,
    env: &Environment,
    duration_s: f64,
    dt: f64,
    sample_s: f64,
) -> Result<(Vec<WearSample>, LigSensorState, Environment), SimError> {
    let activity = ActivityScenario::normal();
    let gaps = [0.0; POINTS];
    let mut env = *env;
    let mut lig = LigSensorState {
        occupancy: model.lig.steady_occupancy(env.rh_in, env.ambient_t),
        ..model.lig
    };
    let n = (duration_s / dt).round() as u64;
    let every = (sample_s / dt).round().max(1.0) as u64;
    let mut out = vec![WearSample {
        t_s: 0.0,
        rh_in: env.rh_in,
        lig_change: lig.normalized_change(),
    }];
    for i in 1..=n {
        env = humidity_step(&env, &model.seal, &gaps, &activity, dt);
        lig = step_lig(&lig, env.rh_in, env.ambient_t, dt)?;
        if i % every == 0 {
            out.push(WearSample {
                t_s: i as f64 * dt,
                rh_in: env.rh_in,
                lig_change: lig.normalized_change(),
            });
        }
    }
    Ok((out, lig, env))
}

/// Desorb `lig` in ambient air under the device's heater controller. Returns
/// the ticks taken and the final ΔR/R₀, or `None` if not done in `max_s`.
pub fn desorb_after_doff(
    lig: &LigSensorState,
    model: &ModelParams,
    cfg: &DeviceConfig,
    env: &Environment,
    max_s: f64,
) -> Result<Option<(u64, f64)>, SimError> {
    let dt = cfg.tick_period_s;
    let mut ctl = DesorbController::new();
    let mut s = *lig;
    let n = (max_s / dt).round() as u64;
    for tick in 1..=n {
        let out = ctl.tick(s.normalized_change(), &model.heater, cfg.desorb_target_c, cfg)?;
        if out.done {
            return Ok(Some((tick, s.normalized_change())));
        }
        let heater_c = out.heater_temp_c;
        let surface = surface_relative_humidity(env.ambient_rh, env.ambient_t, heater_c);
        s = step_lig(&s, surface, heater_c, dt)?;
    }
    Ok(None)
}

/// One row of the fit-test table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitTestRow {
    pub exercise: ActivityKind,
    pub ff_autofit_off: f64,
    pub ff_autofit_on: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitTestTable {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<FitTestRow>,
    pub mean_ratio: f64,
    pub converged_after_ticks: Option<u64>,
}

/// Run the scenario with the controller enabled and disabled and compare
/// the per-exercise fit factors.
pub fn fit_test(sc: &Scenario) -> Result<(FitTestTable, RunOutcome, RunOutcome), SimError> {
    fit_test_with(sc, |_| Ok(LoopbackLink::new()))
}

/// [`fit_test`] over links built by `make_link`, called with the autofit flag.
pub fn fit_test_with<L, F>(sc: &Scenario, make_link: F) -> Result<(FitTestTable, RunOutcome, RunOutcome), SimError>
where
    L: Link + Send,
    F: Fn(bool) -> Result<L, SimError> + Sync,
{
    let kinds = sc.exercise_kinds();
    let missing: Vec<&str> = ActivityKind::ALL
        .iter()
        .filter(|k| !kinds.contains(k))
        .map(|k| k.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(SimError::MissingExercises(missing.join(", ")));
    }
    let on = Scenario {
        autofit: true,
        ..sc.clone()
    };
    let off = Scenario {
        autofit: false,
        ..sc.clone()
    };
    let (on, off) = std::thread::scope(|s| {
        let a = s.spawn(|| Simulation::with_link(on, make_link(true)?)?.run());
        let b = s.spawn(|| Simulation::with_link(off, make_link(false)?)?.run());
        (a.join().expect("autofit-on run panicked"), b.join().expect("autofit-off run panicked"))
    });
    let (on, off) = (on?, off?);
    let mean_of = |run: &RunOutcome, k: ActivityKind| {
        run.summary
            .exercises
            .iter()
            .find(|e| e.kind == k)
            .map_or(f64::NAN, |e| e.ff_mean)
    };
    let rows: Vec<FitTestRow> = ActivityKind::ALL
        .iter()
        .map(|&k| {
            let (ff_on, ff_off) = (mean_of(&on, k), mean_of(&off, k));
            FitTestRow {
                exercise: k,
                ff_autofit_off: ff_off,
                ff_autofit_on: ff_on,
                ratio: ff_on / ff_off,
            }
        })
        .collect();
    let mean_ratio = rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len() as f64;
    let table = FitTestTable {
        schema_version: OUTPUT_SCHEMA_VERSION,
        scenario: sc.name.clone(),
        seed: sc.seed,
        rows,
        mean_ratio,
        converged_after_ticks: on.summary.converged_after_ticks,
    };
    Ok((table, on, off))
}
