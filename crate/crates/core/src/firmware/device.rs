use serde::{Deserialize, Serialize};

use crate::protocol::Message;
use crate::seal::POINTS;
use crate::sensor::{
    cdc_convert, sponge_capacitance, BridgeConfig, CdcConfig, HeaterParams, LigSensorState,
    SpongeSensorParams,
};
use crate::types::{AlertCode, DeviceMode, FitColor};

use super::calibration::{calibrate, Calibration};
use super::classify::{classify_fit, classify_with_hysteresis};
use super::config::DeviceConfig;
use super::control::{FitController, MotorCommand, SensorLayout};
use super::desorb::DesorbController;
use super::energy::{EnergyLedger, Load};
use super::humidity::HumidityGuard;
use super::FirmwareError;

/// What the firmware knows about its own sensing hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareModel {
    pub sponge: SpongeSensorParams,
    pub cdc: CdcConfig,
    pub bridge: BridgeConfig,
    /// Nominal humidity element (occupancy ignored).
    pub lig: LigSensorState,
    pub heater: HeaterParams,
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self {
            sponge: SpongeSensorParams::default(),
            cdc: CdcConfig::default(),
            bridge: BridgeConfig::default(),
            lig: LigSensorState::default(),
            heater: HeaterParams::default(),
        }
    }
}

impl HardwareModel {
    /// Code change produced by the reference contact pressure.
    pub fn reference_span(&self, cfg: &DeviceConfig) -> f64 {
        let force = cfg.reference_pressure_kpa * 1000.0 * self.sponge.plate_area;
        let loaded = sponge_capacitance(&self.sponge, force, 0).unwrap_or(f64::NAN);
        let rest = self.sponge.rest_capacitance();
        (cdc_convert(&self.cdc, loaded) - cdc_convert(&self.cdc, rest)) as f64
    }
}

/// One sample of every sensing channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorReadings {
    pub ts_ms: u32,
    pub pressure_codes: [i16; POINTS],
    pub humidity_code: u16,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickOutput {
    pub to_host: Vec<Message>,
    pub motors: Vec<MotorCommand>,
    pub heater_voltage: f64,
}

/// Ordered firmware input; a recorded list of these replays a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum FirmwareInput {
    Host(Message),
    Tick(SensorReadings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub tick: u64,
    pub from: DeviceMode,
    pub to: DeviceMode,
}

/// The whole device as a deterministic state machine.
#[derive(Debug, Clone)]
pub struct Firmware {
    cfg: DeviceConfig,
    hw: HardwareModel,
    layout: SensorLayout,
    reference_span: f64,
    mode: DeviceMode,
    tick: u64,
    autofit: bool,
    calibration: Option<Calibration>,
    cal_frames: Vec<[i32; POINTS]>,
    controller: FitController,
    guard: HumidityGuard,
    desorb: DesorbController,
    colors: [FitColor; POINTS],
    normalized: [f64; POINTS],
    lig_change: f64,
    rh_estimate: f64,
    heater_voltage: f64,
    heater_temp_c: f64,
    desorb_target_c: f64,
    manual_queue: Vec<MotorCommand>,
    pending_calibrate: bool,
    pending_heater: Option<(bool, u8)>,
    grace_ticks: u32,
    red_ticks: u32,
    since_report: u32,
    transitions: Vec<Transition>,
    energy: EnergyLedger,
}

impl Firmware {
    pub fn new(cfg: DeviceConfig, hw: HardwareModel, layout: SensorLayout) -> Result<Self, FirmwareError> {
        cfg.validate()?;
        let reference_span = hw.reference_span(&cfg);
        if !(reference_span > 0.0) {
            return Err(FirmwareError::InvalidConfig("reference pressure maps to no code change"));
        }
        let ambient = hw.heater.ambient_t;
        let target = cfg.desorb_target_c;
        Ok(Self {
            cfg,
            hw,
            layout,
            reference_span,
            mode: DeviceMode::Idle,
            tick: 0,
            autofit: true,
            calibration: None,
            cal_frames: Vec::new(),
            controller: FitController::new(),
            guard: HumidityGuard::new(),
            desorb: DesorbController::new(),
            colors: [FitColor::Red; POINTS],
            normalized: [0.0; POINTS],
            lig_change: 0.0,
            rh_estimate: 0.0,
            heater_voltage: 0.0,
            heater_temp_c: ambient,
            desorb_target_c: target,
            manual_queue: Vec::new(),
            pending_calibrate: false,
            pending_heater: None,
            grace_ticks: 0,
            red_ticks: 0,
            since_report: 0,
            transitions: Vec::new(),
            energy: EnergyLedger::default(),
        })
    }

    pub fn mode(&self) -> DeviceMode {
        self.mode
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn colors(&self) -> &[FitColor; POINTS] {
        &self.colors
    }

    pub fn normalized(&self) -> &[f64; POINTS] {
        &self.normalized
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn autofit(&self) -> bool {
        self.autofit
    }

    pub fn set_autofit(&mut self, on: bool) {
        self.autofit = on;
    }

    pub fn rh_estimate(&self) -> f64 {
        self.rh_estimate
    }

    pub fn lig_change(&self) -> f64 {
        self.lig_change
    }

    pub fn heater_temp_c(&self) -> f64 {
        self.heater_temp_c
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn energy(&self) -> &EnergyLedger {
        &self.energy
    }

    pub fn reference_span(&self) -> f64 {
        self.reference_span
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Accept a host command; it takes effect on the next tick.
    pub fn handle_host(&mut self, msg: &Message) -> Result<(), FirmwareError> {
        let reject = || FirmwareError::CommandRejected {
            kind: msg.kind(),
            mode: self.mode,
        };
        match *msg {
            Message::CalibrateCmd if self.mode == DeviceMode::Idle => self.pending_calibrate = true,
            Message::MotorCommand { motor, step } if self.mode.is_wearing() => {
                let m = self.cfg.step_max;
                let step = if step == crate::protocol::SLACK_STEP { step } else { step.clamp(-m, m) };
                self.manual_queue.push(MotorCommand { motor, step });
            }
            Message::HeaterCmd { on: true, target_c } if self.mode == DeviceMode::DoffAlerted => {
                self.pending_heater = Some((true, target_c));
            }
            Message::HeaterCmd { on: false, target_c } if self.mode == DeviceMode::Desorbing => {
                self.pending_heater = Some((false, target_c));
            }
            Message::ModeStatus {
                mode: DeviceMode::SelfFitAdjusting,
            } => self.autofit = true,
            Message::ModeStatus { mode: DeviceMode::Idle } => self.autofit = false,
            _ => return Err(reject()),
        }
        Ok(())
    }

    pub fn apply(&mut self, input: &FirmwareInput) -> Result<Option<TickOutput>, FirmwareError> {
        match input {
            FirmwareInput::Host(m) => self.handle_host(m).map(|_| None),
            FirmwareInput::Tick(r) => Ok(Some(self.tick(r))),
        }
    }

    fn transition(&mut self, to: DeviceMode, out: &mut TickOutput) {
        if to == self.mode {
            return;
        }
        assert!(
            self.mode.can_transition(to),
            "illegal mode transition {} -> {}",
            self.mode,
            to
        );
        self.transitions.push(Transition {
            tick: self.tick,
            from: self.mode,
            to,
        });
        self.mode = to;
        out.to_host.push(Message::ModeStatus { mode: to });
    }

    fn measure_humidity(&mut self, code: u16) {
        let b = &self.hw.bridge;
        let r = b.resistance_from_output(b.adc_voltage(code)).unwrap_or(f64::INFINITY);
        let lig = &self.hw.lig;
        self.lig_change = (r / lig.base_resistance - 1.0).max(0.0);
        let theta = (self.lig_change / lig.resistance_gain).min(1.0);
        self.rh_estimate = lig.equilibrium_rh(theta, self.heater_temp_c);
    }

    fn classify(&mut self, codes: &[i16; POINTS], out: &mut TickOutput) {
        let Some(cal) = &self.calibration else {
            return;
        };
        let holding = self.mode.is_wearing();
        let mut fault = false;
        for ch in 0..POINTS {
            let n = cal.normalize(ch, codes[ch] as i32);
            let color = if holding {
                classify_with_hysteresis(n, self.colors[ch], &self.cfg)
            } else {
                classify_fit(n, &self.cfg)
            };
            match color {
                Ok(c) => {
                    self.normalized[ch] = n;
                    self.colors[ch] = c;
                }
                Err(_) => fault = true,
            }
        }
        if fault {
            out.to_host.push(Message::Alert {
                code: AlertCode::SensorFault,
            });
        }
    }

    /// Advance one control period.
    pub fn tick(&mut self, readings: &SensorReadings) -> TickOutput {
        self.tick += 1;
        let mut out = TickOutput::default();
        out.to_host.push(Message::PressureFrame {
            ts_ms: readings.ts_ms,
            codes: readings.pressure_codes,
        });
        out.to_host.push(Message::HumiditySample {
            ts_ms: readings.ts_ms,
            resistance_code: readings.humidity_code,
        });
        self.measure_humidity(readings.humidity_code);
        let previous_colors = self.colors;
        self.classify(&readings.pressure_codes, &mut out);

        match self.mode {
            DeviceMode::Idle => {
                self.heater_voltage = 0.0;
                if std::mem::take(&mut self.pending_calibrate) {
                    self.cal_frames.clear();
                    self.transition(DeviceMode::Calibrating, &mut out);
                }
            }
            DeviceMode::Calibrating => self.calibrating_tick(readings, &mut out),
            DeviceMode::SelfFitAdjusting | DeviceMode::HumidityMonitoring => self.wearing_tick(&mut out),
            DeviceMode::DoffAlerted => {
                if let Some((true, target)) = self.pending_heater.take() {
                    self.start_desorb(target as f64, &mut out);
                } else if self.colors.iter().all(|c| *c == FitColor::Red) {
                    self.red_ticks += 1;
                    if self.red_ticks >= self.cfg.doff_detect_ticks {
                        self.start_desorb(self.cfg.desorb_target_c, &mut out);
                    }
                } else {
                    self.red_ticks = 0;
                }
            }
            DeviceMode::Desorbing => self.desorbing_tick(&mut out),
        }

        for m in &out.motors {
            out.to_host.push(m.to_message());
        }
        self.since_report += 1;
        if self.calibration.is_some()
            && (self.colors != previous_colors || self.since_report >= self.cfg.fit_report_every)
        {
            self.since_report = 0;
            out.to_host.push(Message::FitStateUpdate { colors: self.colors });
        }
        out.heater_voltage = self.heater_voltage;
        self.heater_temp_c = self.hw.heater.ambient_t + self.hw.heater.thermal_resistance * self.hw.heater.power(self.heater_voltage);

        let mut loads = vec![Load::Mcu, Load::Radio, Load::Sensors];
        if !out.motors.is_empty() {
            loads.push(Load::Motor);
        }
        if self.heater_voltage > 0.0 {
            loads.push(Load::Heater(self.heater_voltage));
        }
        self.energy
            .record(&loads, &self.cfg.loads, &self.hw.heater, self.cfg.tick_period_s);
        out
    }

    fn calibrating_tick(&mut self, readings: &SensorReadings, out: &mut TickOutput) {
        self.cal_frames.push(readings.pressure_codes.map(|c| c as i32));
        if self.cal_frames.len() < self.cfg.calibration_frames {
            return;
        }
        let frames = std::mem::take(&mut self.cal_frames);
        let result = match &mut self.calibration {
            Some(cal) => cal.recalibrate(&frames, self.reference_span, &self.cfg).map(|_| ()),
            None => calibrate(&frames, self.reference_span, &self.cfg).map(|c| {
                self.calibration = Some(c);
            }),
        };
        match result {
            Ok(()) => {
                let cal = self.calibration.as_ref().expect("calibrated");
                out.to_host.push(Message::CalibrateAck {
                    offsets: cal.offset_code.map(|o| o.clamp(i16::MIN as i32, i16::MAX as i32) as i16),
                    gain_q8_8: cal.gain_q8_8(self.hw.cdc.full_scale_code()),
                });
                self.controller.reset();
                self.guard.reset();
                self.grace_ticks = 0;
                self.transition(DeviceMode::SelfFitAdjusting, out);
            }
            Err(_) => out.to_host.push(Message::Alert {
                code: AlertCode::CalibrationFailed,
            }),
        }
    }

    fn wearing_tick(&mut self, out: &mut TickOutput) {
        let manual: Vec<MotorCommand> = self.manual_queue.drain(..).collect();
        if !manual.is_empty() {
            self.grace_ticks = self.cfg.ticks_for(self.cfg.manual_grace_s);
            out.motors.extend(manual);
        }
        let (cmds, next) = self.controller.tick(&self.colors, self.mode, &self.layout, &self.cfg);
        if self.grace_ticks > 0 {
            self.grace_ticks -= 1;
        } else if self.autofit && out.motors.is_empty() {
            out.motors.extend(cmds);
        }
        self.transition(next, out);
        let guard = self.guard.tick(self.rh_estimate, self.mode, &self.cfg);
        if guard.alert {
            out.to_host.push(Message::Alert {
                code: AlertCode::HumidityDoff,
            });
            out.motors = guard.commands;
            self.red_ticks = 0;
            self.manual_queue.clear();
            self.transition(guard.mode, out);
        }
    }

    fn start_desorb(&mut self, target_c: f64, out: &mut TickOutput) {
        self.desorb.reset();
        self.desorb_target_c = target_c;
        self.red_ticks = 0;
        self.transition(DeviceMode::Desorbing, out);
        self.desorbing_tick(out);
    }

    fn desorbing_tick(&mut self, out: &mut TickOutput) {
        if let Some((false, _)) = self.pending_heater.take() {
            self.heater_voltage = 0.0;
            self.transition(DeviceMode::Idle, out);
            return;
        }
        match self
            .desorb
            .tick(self.lig_change, &self.hw.heater, self.desorb_target_c, &self.cfg)
        {
            Ok(d) if d.done => {
                self.heater_voltage = 0.0;
                self.transition(DeviceMode::Idle, out);
            }
            Ok(d) => self.heater_voltage = d.heater_voltage,
            Err(_) => {
                self.heater_voltage = 0.0;
                out.to_host.push(Message::Alert {
                    code: AlertCode::ThermalFault,
                });
                self.transition(DeviceMode::Idle, out);
            }
        }
    }
}

/// Re-run `inputs` on a fresh device, returning every tick's output and the
/// transition log.
pub fn replay(
    cfg: DeviceConfig,
    hw: HardwareModel,
    layout: SensorLayout,
    inputs: &[FirmwareInput],
) -> Result<(Vec<TickOutput>, Vec<Transition>), FirmwareError> {
    let mut fw = Firmware::new(cfg, hw, layout)?;
    let mut outs = Vec::new();
    for input in inputs {
        // Rejected host commands are part of the recorded behaviour.
        if let Ok(Some(o)) = fw.apply(input) {
            outs.push(o);
        }
    }
    Ok((outs, fw.transitions().to_vec()))
}
