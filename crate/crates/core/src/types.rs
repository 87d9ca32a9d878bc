//! Enumerations shared by the firmware and the wire format.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Four-level contact classification shown per sensing point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum FitColor {
    /// Poor fit.
    Red = 0,
    /// Moderately poor fit.
    Yellow = 1,
    /// Proper fit.
    Green = 2,
    /// Over-fit.
    DarkGray = 3,
}

impl FitColor {
    pub const ALL: [FitColor; 4] = [FitColor::Red, FitColor::Yellow, FitColor::Green, FitColor::DarkGray];

    pub fn from_wire(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn to_wire(self) -> u8 {
        self as u8
    }

    pub fn is_underfit(self) -> bool {
        matches!(self, FitColor::Red | FitColor::Yellow)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FitColor::Red => "red",
            FitColor::Yellow => "yellow",
            FitColor::Green => "green",
            FitColor::DarkGray => "dark_gray",
        }
    }
}

impl fmt::Display for FitColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum DeviceMode {
    Idle = 0,
    Calibrating = 1,
    SelfFitAdjusting = 2,
    HumidityMonitoring = 3,
    DoffAlerted = 4,
    Desorbing = 5,
}

impl DeviceMode {
    pub const ALL: [DeviceMode; 6] = [
        DeviceMode::Idle,
        DeviceMode::Calibrating,
        DeviceMode::SelfFitAdjusting,
        DeviceMode::HumidityMonitoring,
        DeviceMode::DoffAlerted,
        DeviceMode::Desorbing,
    ];

    pub fn from_wire(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn to_wire(self) -> u8 {
        self as u8
    }

    /// Edges of the mode graph:
    /// idle → calibrating → self_fit_adjusting ⇄ humidity_monitoring →
    /// doff_alerted → desorbing → idle.
    pub fn can_transition(self, to: DeviceMode) -> bool {
        use DeviceMode::*;
        matches!(
            (self, to),
            (Idle, Calibrating)
                | (Calibrating, SelfFitAdjusting)
                | (SelfFitAdjusting, HumidityMonitoring)
                | (HumidityMonitoring, SelfFitAdjusting)
                | (HumidityMonitoring, DoffAlerted)
                | (DoffAlerted, Desorbing)
                | (Desorbing, Idle)
        )
    }

    /// Modes in which the fit controller runs.
    pub fn is_wearing(self) -> bool {
        matches!(self, DeviceMode::SelfFitAdjusting | DeviceMode::HumidityMonitoring)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceMode::Idle => "idle",
            DeviceMode::Calibrating => "calibrating",
            DeviceMode::SelfFitAdjusting => "self_fit_adjusting",
            DeviceMode::HumidityMonitoring => "humidity_monitoring",
            DeviceMode::DoffAlerted => "doff_alerted",
            DeviceMode::Desorbing => "desorbing",
        }
    }
}

impl fmt::Display for DeviceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Motor {
    Left = 0,
    Right = 1,
}

impl Motor {
    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            0 => Some(Motor::Left),
            1 => Some(Motor::Right),
            _ => None,
        }
    }

    pub fn to_wire(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum AlertCode {
    /// In-mask humidity stayed above the alert level; take the respirator off.
    HumidityDoff = 1,
    /// Heater model exceeded its safe temperature.
    ThermalFault = 2,
    /// Calibration frames were missing or unstable.
    CalibrationFailed = 3,
    /// A sensing channel produced a non-finite reading.
    SensorFault = 4,
}

impl AlertCode {
    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            1 => Some(AlertCode::HumidityDoff),
            2 => Some(AlertCode::ThermalFault),
            3 => Some(AlertCode::CalibrationFailed),
            4 => Some(AlertCode::SensorFault),
            _ => None,
        }
    }

    pub fn to_wire(self) -> u8 {
        self as u8
    }
}
