use crate::sensor::{heater_temperature, HeaterParams};

use super::config::DeviceConfig;
use super::FirmwareError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesorbOutput {
    pub heater_voltage: f64,
    /// Modeled heater temperature at `heater_voltage`, °C.
    pub heater_temp_c: f64,
    pub done: bool,
}

/// Two-level heater drive around the target plus baseline-recovery dwell.
///
/// The drive switches between the quantized voltages just below and just
/// above the steady-state voltage for the target, choosing the upper level
/// whenever the last modeled temperature sat below target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesorbController {
    last_temp_c: Option<f64>,
    below_ticks: u32,
}

impl DesorbController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Quantized voltage levels bracketing the target temperature.
    pub fn levels(heater: &HeaterParams, target_c: f64, step: f64) -> (f64, f64) {
        let v = heater.voltage_for(target_c);
        let lo = (v / step).floor() * step;
        (lo, lo + step)
    }

    /// One tick given the measured ΔR/R₀ of the humidity element.
    pub fn tick(
        &mut self,
        normalized_change: f64,
        heater: &HeaterParams,
        target_c: f64,
        cfg: &DeviceConfig,
    ) -> Result<DesorbOutput, FirmwareError> {
        if normalized_change < cfg.desorb_done_eps {
            self.below_ticks += 1;
        } else {
            self.below_ticks = 0;
        }
        if self.below_ticks >= cfg.ticks_for(cfg.desorb_done_dwell_s).max(1) {
            self.last_temp_c = None;
            return Ok(DesorbOutput {
                heater_voltage: 0.0,
                heater_temp_c: heater.ambient_t,
                done: true,
            });
        }
        let (lo, hi) = Self::levels(heater, target_c, cfg.heater_voltage_step);
        let v = match self.last_temp_c {
            Some(t) if t >= target_c => lo,
            _ => hi,
        };
        let (_, t) = heater_temperature(heater, v).map_err(|_| FirmwareError::ThermalFault { temp_c: f64::NAN })?;
        if t > cfg.thermal_limit_c {
            self.last_temp_c = None;
            return Err(FirmwareError::ThermalFault { temp_c: t });
        }
        self.last_temp_c = Some(t);
        Ok(DesorbOutput {
            heater_voltage: v,
            heater_temp_c: t,
            done: false,
        })
    }
}
