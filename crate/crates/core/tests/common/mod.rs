#![allow(dead_code)]

use maskloop_core::protocol::Message;
use maskloop_core::{AlertCode, DeviceMode, FitColor, Motor};
use proptest::prelude::*;

pub fn arb_color() -> impl Strategy<Value = FitColor> {
    prop::sample::select(FitColor::ALL.to_vec())
}

pub fn arb_mode() -> impl Strategy<Value = DeviceMode> {
    prop::sample::select(DeviceMode::ALL.to_vec())
}

pub fn arb_motor() -> impl Strategy<Value = Motor> {
    prop_oneof![Just(Motor::Left), Just(Motor::Right)]
}

pub fn arb_alert() -> impl Strategy<Value = AlertCode> {
    prop::sample::select(vec![
        AlertCode::HumidityDoff,
        AlertCode::ThermalFault,
        AlertCode::CalibrationFailed,
        AlertCode::SensorFault,
    ])
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u32>(), any::<[i16; 8]>()).prop_map(|(ts_ms, codes)| Message::PressureFrame { ts_ms, codes }),
        (any::<u32>(), any::<u16>()).prop_map(|(ts_ms, resistance_code)| Message::HumiditySample {
            ts_ms,
            resistance_code
        }),
        prop::array::uniform8(arb_color()).prop_map(|colors| Message::FitStateUpdate { colors }),
        (arb_motor(), any::<i8>()).prop_map(|(motor, step)| Message::MotorCommand { motor, step }),
        Just(Message::CalibrateCmd),
        (any::<[i16; 8]>(), any::<u16>()).prop_map(|(offsets, gain_q8_8)| Message::CalibrateAck { offsets, gain_q8_8 }),
        arb_alert().prop_map(|code| Message::Alert { code }),
        (any::<bool>(), any::<u8>()).prop_map(|(on, target_c)| Message::HeaterCmd { on, target_c }),
        arb_mode().prop_map(|mode| Message::ModeStatus { mode }),
    ]
}

/// Bit-at-a-time CRC-16/CCITT-FALSE.
pub fn crc16_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}
