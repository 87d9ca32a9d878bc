use serde::{Deserialize, Serialize};

use crate::seal::POINTS;
use crate::types::{AlertCode, DeviceMode, FitColor, Motor};

/// Motor step value that releases a strap to slack.
pub const SLACK_STEP: i8 = i8::MIN;

/// Wire message type bytes, in inventory order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MessageKind {
    PressureFrame = 0x01,
    HumiditySample = 0x02,
    FitStateUpdate = 0x03,
    MotorCommand = 0x04,
    CalibrateCmd = 0x05,
    CalibrateAck = 0x06,
    Alert = 0x07,
    HeaterCmd = 0x08,
    ModeStatus = 0x09,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::PressureFrame,
        MessageKind::HumiditySample,
        MessageKind::FitStateUpdate,
        MessageKind::MotorCommand,
        MessageKind::CalibrateCmd,
        MessageKind::CalibrateAck,
        MessageKind::Alert,
        MessageKind::HeaterCmd,
        MessageKind::ModeStatus,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        (1..=9).contains(&b).then(|| Self::ALL[b as usize - 1])
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }

    /// Fixed payload length of this kind, bytes.
    pub fn payload_len(self) -> usize {
        match self {
            MessageKind::PressureFrame => 4 + 2 * POINTS,
            MessageKind::HumiditySample => 6,
            MessageKind::FitStateUpdate => POINTS,
            MessageKind::MotorCommand => 2,
            MessageKind::CalibrateCmd => 0,
            MessageKind::CalibrateAck => 2 * POINTS + 2,
            MessageKind::Alert => 1,
            MessageKind::HeaterCmd => 2,
            MessageKind::ModeStatus => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::PressureFrame => "pressure_frame",
            MessageKind::HumiditySample => "humidity_sample",
            MessageKind::FitStateUpdate => "fit_state_update",
            MessageKind::MotorCommand => "motor_command",
            MessageKind::CalibrateCmd => "calibrate_cmd",
            MessageKind::CalibrateAck => "calibrate_ack",
            MessageKind::Alert => "alert",
            MessageKind::HeaterCmd => "heater_cmd",
            MessageKind::ModeStatus => "mode_status",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Typed payloads carried by frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    PressureFrame { ts_ms: u32, codes: [i16; POINTS] },
    HumiditySample { ts_ms: u32, resistance_code: u16 },
    FitStateUpdate { colors: [FitColor; POINTS] },
    MotorCommand { motor: Motor, step: i8 },
    CalibrateCmd,
    /// `gain_q8_8` is the channel gain times the converter's positive full
    /// scale code, in unsigned 8.8 fixed point.
    CalibrateAck { offsets: [i16; POINTS], gain_q8_8: u16 },
    Alert { code: AlertCode },
    HeaterCmd { on: bool, target_c: u8 },
    /// Device → host: current mode. Host → device: auto-fit request
    /// (`self_fit_adjusting` enables, `idle` disables).
    ModeStatus { mode: DeviceMode },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::PressureFrame { .. } => MessageKind::PressureFrame,
            Message::HumiditySample { .. } => MessageKind::HumiditySample,
            Message::FitStateUpdate { .. } => MessageKind::FitStateUpdate,
            Message::MotorCommand { .. } => MessageKind::MotorCommand,
            Message::CalibrateCmd => MessageKind::CalibrateCmd,
            Message::CalibrateAck { .. } => MessageKind::CalibrateAck,
            Message::Alert { .. } => MessageKind::Alert,
            Message::HeaterCmd { .. } => MessageKind::HeaterCmd,
            Message::ModeStatus { .. } => MessageKind::ModeStatus,
        }
    }

    /// Device timestamp, for the kinds that carry one.
    pub fn timestamp_ms(&self) -> Option<u32> {
        match self {
            Message::PressureFrame { ts_ms, .. } | Message::HumiditySample { ts_ms, .. } => Some(*ts_ms),
            _ => None,
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::PressureFrame { ts_ms, codes } => {
                out.extend_from_slice(&ts_ms.to_le_bytes());
                for c in codes {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            Message::HumiditySample { ts_ms, resistance_code } => {
                out.extend_from_slice(&ts_ms.to_le_bytes());
                out.extend_from_slice(&resistance_code.to_le_bytes());
            }
            Message::FitStateUpdate { colors } => out.extend(colors.iter().map(|c| c.to_wire())),
            Message::MotorCommand { motor, step } => {
                out.push(motor.to_wire());
                out.push(*step as u8);
            }
            Message::CalibrateCmd => {}
            Message::CalibrateAck { offsets, gain_q8_8 } => {
                for o in offsets {
                    out.extend_from_slice(&o.to_le_bytes());
                }
                out.extend_from_slice(&gain_q8_8.to_le_bytes());
            }
            Message::Alert { code } => out.push(code.to_wire()),
            Message::HeaterCmd { on, target_c } => {
                out.push(*on as u8);
                out.push(*target_c);
            }
            Message::ModeStatus { mode } => out.push(mode.to_wire()),
        }
    }

    /// Parse a payload whose length has already been checked against `kind`.
    pub(crate) fn read_payload(kind: MessageKind, p: &[u8]) -> Option<Message> {
        debug_assert_eq!(p.len(), kind.payload_len());
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        let i16_at = |i: usize| i16::from_le_bytes([p[i], p[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        Some(match kind {
            MessageKind::PressureFrame => Message::PressureFrame {
                ts_ms: u32_at(0),
                codes: std::array::from_fn(|i| i16_at(4 + 2 * i)),
            },
            MessageKind::HumiditySample => Message::HumiditySample {
                ts_ms: u32_at(0),
                resistance_code: u16_at(4),
            },
            MessageKind::FitStateUpdate => {
                let mut colors = [FitColor::Red; POINTS];
                for (c, b) in colors.iter_mut().zip(p) {
                    *c = FitColor::from_wire(*b)?;
                }
                Message::FitStateUpdate { colors }
            }
            MessageKind::MotorCommand => Message::MotorCommand {
                motor: Motor::from_wire(p[0])?,
                step: p[1] as i8,
            },
            MessageKind::CalibrateCmd => Message::CalibrateCmd,
            MessageKind::CalibrateAck => Message::CalibrateAck {
                offsets: std::array::from_fn(|i| i16_at(2 * i)),
                gain_q8_8: u16_at(2 * POINTS),
            },
            MessageKind::Alert => Message::Alert {
                code: AlertCode::from_wire(p[0])?,
            },
            MessageKind::HeaterCmd => Message::HeaterCmd {
                on: match p[0] {
                    0 => false,
                    1 => true,
                    _ => return None,
                },
                target_c: p[1],
            },
            MessageKind::ModeStatus => Message::ModeStatus {
                mode: DeviceMode::from_wire(p[0])?,
            },
        })
    }
}
