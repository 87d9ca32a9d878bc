//! Device logic: calibration, fit classification, strap control, humidity
//! guard, desorption cycle and energy accounting, tied together by the
//! [`Firmware`] mode machine.

mod calibration;
mod classify;
mod config;
mod control;
mod desorb;
mod device;
mod energy;
mod humidity;

use thiserror::Error;

use crate::protocol::MessageKind;
use crate::types::DeviceMode;

pub use calibration::{calibrate, Calibration, OtpStatus};
pub use classify::{classify_fit, classify_with_hysteresis};
pub use config::{DeviceConfig, FitThresholds};
pub use control::{side_step, FitController, MotorCommand, SensorLayout};
pub use desorb::{DesorbController, DesorbOutput};
pub use device::{replay, Firmware, FirmwareInput, HardwareModel, SensorReadings, TickOutput, Transition};
pub use energy::{energy_tick, EnergyLedger, Load, LoadTable};
pub use humidity::{GuardOutcome, HumidityGuard};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FirmwareError {
    #[error("calibration incomplete: {have} of {need} resting frames")]
    CalibrationIncomplete { have: usize, need: usize },
    #[error("channel {0} too noisy to calibrate")]
    UnstableChannel(usize),
    #[error("sensor fault on channel {0:?}")]
    SensorFault(Option<usize>),
    #[error("heater over temperature ({temp_c:.1} °C)")]
    ThermalFault { temp_c: f64 },
    #[error("{kind:?} not accepted in mode {mode}")]
    CommandRejected { kind: MessageKind, mode: DeviceMode },
    #[error("invalid device config: {0}")]
    InvalidConfig(&'static str),
}

impl From<&crate::seal::FaceProfile> for SensorLayout {
    fn from(p: &crate::seal::FaceProfile) -> Self {
        Self {
            left: p.left_points.clone(),
            right: p.right_points.clone(),
        }
    }
}
