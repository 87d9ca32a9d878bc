use serde::{Deserialize, Serialize};

use crate::sensor::HeaterParams;

/// Constant draw of each switchable load, mW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadTable {
    pub mcu_mw: f64,
    pub radio_mw: f64,
    pub motor_mw: f64,
    pub sensors_mw: f64,
}

impl Default for LoadTable {
    fn default() -> Self {
        Self {
            mcu_mw: 5.0,
            radio_mw: 10.0,
            motor_mw: 50.0,
            sensors_mw: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Mcu,
    Radio,
    Motor,
    Sensors,
    /// Heater driven at the given voltage.
    Heater(f64),
}

/// Energy drawn by `active_loads` over `dt` seconds, mJ.
pub fn energy_tick(active_loads: &[Load], table: &LoadTable, heater: &HeaterParams, dt: f64) -> f64 {
    active_loads
        .iter()
        .map(|l| match *l {
            Load::Mcu => table.mcu_mw,
            Load::Radio => table.radio_mw,
            Load::Motor => table.motor_mw,
            Load::Sensors => table.sensors_mw,
            Load::Heater(v) => heater.power(v) * 1000.0,
        })
        .sum::<f64>()
        * dt
}

/// Running totals, mJ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub total_mj: f64,
    pub heater_mj: f64,
    pub motor_mj: f64,
}

impl EnergyLedger {
    pub fn record(&mut self, loads: &[Load], table: &LoadTable, heater: &HeaterParams, dt: f64) -> f64 {
        let e = energy_tick(loads, table, heater, dt);
        self.total_mj += e;
        for l in loads {
            match l {
                Load::Heater(_) => self.heater_mj += energy_tick(&[*l], table, heater, dt),
                Load::Motor => self.motor_mj += energy_tick(&[*l], table, heater, dt),
                _ => {}
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn examples() {
        let t = LoadTable::default();
        let h = HeaterParams::default();
        assert_eq!(energy_tick(&[], &t, &h, 1.0), 0.0);
        assert_relative_eq!(energy_tick(&[Load::Radio, Load::Motor], &t, &h, 1.0), 60.0);
        // 36 V² / 229.27 Ω * 10 s = 1.570 J
        let e = energy_tick(&[Load::Heater(6.0)], &t, &h, 10.0);
        assert_relative_eq!(e, 36.0 / 229.27 * 10.0 * 1000.0, max_relative = 1e-12);
        assert!((e - 1570.0).abs() < 5.0);
    }

    #[test]
    fn ledger_splits_heater() {
        let t = LoadTable::default();
        let h = HeaterParams::default();
        let mut l = EnergyLedger::default();
        l.record(&[Load::Mcu, Load::Heater(6.0)], &t, &h, 1.0);
        assert_relative_eq!(l.total_mj, 5.0 + l.heater_mj, max_relative = 1e-12);
    }
}
