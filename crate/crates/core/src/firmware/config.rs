use serde::{Deserialize, Serialize};

use super::energy::LoadTable;
use super::FirmwareError;

/// Normalized-signal boundaries of the four fit colors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitThresholds {
    pub red_below: f64,
    pub yellow_below: f64,
    pub green_upto: f64,
}

impl Default for FitThresholds {
    fn default() -> Self {
        Self {
            red_below: 0.25,
            yellow_below: 0.60,
            green_upto: 1.40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub thresholds: FitThresholds,
    /// Widening of the current color's interval while the fit is held.
    pub hysteresis_band: f64,
    /// Consecutive all-green ticks before handing over to humidity monitoring.
    pub settle_ticks: u32,
    /// Largest motor step per tick.
    pub step_max: i8,
    pub rh_alert: f64,
    pub rh_alert_dwell_s: f64,
    pub desorb_target_c: f64,
    /// Allowed deviation of the heater from its target, °C.
    pub desorb_band_c: f64,
    pub desorb_done_eps: f64,
    pub desorb_done_dwell_s: f64,
    pub heater_voltage_step: f64,
    pub thermal_limit_c: f64,
    pub tick_period_s: f64,
    /// Frames required to calibrate.
    pub calibration_frames: usize,
    /// Maximum per-channel variance of resting frames, codes².
    pub max_rest_variance: f64,
    /// Contact pressure that normalizes to 1.0, kPa.
    pub reference_pressure_kpa: f64,
    /// Auto-fit pause after a manual motor command, s.
    pub manual_grace_s: f64,
    /// All-red ticks that count as the respirator being taken off.
    pub doff_detect_ticks: u32,
    /// Send a fit-state update at least this often, ticks.
    pub fit_report_every: u32,
    pub loads: LoadTable,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            thresholds: FitThresholds::default(),
            hysteresis_band: 0.05,
            settle_ticks: 5,
            step_max: 1,
            rh_alert: 0.90,
            rh_alert_dwell_s: 30.0,
            desorb_target_c: 60.0,
            desorb_band_c: 2.0,
            desorb_done_eps: 0.02,
            desorb_done_dwell_s: 60.0,
            heater_voltage_step: 0.05,
            thermal_limit_c: 125.0,
            tick_period_s: 0.1,
            calibration_frames: 20,
            max_rest_variance: 100.0,
            reference_pressure_kpa: 24.0,
            manual_grace_s: 5.0,
            doff_detect_ticks: 5,
            fit_report_every: 10,
            loads: LoadTable::default(),
        }
    }
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<(), FirmwareError> {
        let t = &self.thresholds;
        if !(t.red_below < t.yellow_below && t.yellow_below < t.green_upto) {
            return Err(FirmwareError::InvalidConfig("thresholds must be increasing"));
        }
        if !(self.rh_alert > 0.0 && self.rh_alert < 1.0) {
            return Err(FirmwareError::InvalidConfig("rh_alert must be in (0,1)"));
        }
        if !(self.tick_period_s > 0.0) {
            return Err(FirmwareError::InvalidConfig("tick_period_s must be > 0"));
        }
        if self.step_max <= 0 {
            return Err(FirmwareError::InvalidConfig("step_max must be positive"));
        }
        if self.calibration_frames == 0 {
            return Err(FirmwareError::InvalidConfig("calibration_frames must be > 0"));
        }
        if !(self.reference_pressure_kpa > 0.0) {
            return Err(FirmwareError::InvalidConfig("reference_pressure_kpa must be > 0"));
        }
        if !(self.heater_voltage_step > 0.0) {
            return Err(FirmwareError::InvalidConfig("heater_voltage_step must be > 0"));
        }
        if !(self.hysteresis_band >= 0.0) {
            return Err(FirmwareError::InvalidConfig("hysteresis_band must be >= 0"));
        }
        Ok(())
    }

    /// Whole ticks covering `seconds`.
    pub fn ticks_for(&self, seconds: f64) -> u32 {
        (seconds / self.tick_period_s).round().max(0.0) as u32
    }
}
