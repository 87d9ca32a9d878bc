use crate::types::{DeviceMode, Motor};

use super::config::DeviceConfig;
use super::control::MotorCommand;

#[derive(Debug, Clone, PartialEq)]
pub struct GuardOutcome {
    pub alert: bool,
    pub commands: Vec<MotorCommand>,
    pub mode: DeviceMode,
}

/// Doff alert once in-mask humidity has stayed at or above the alert level
/// for the whole dwell window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HumidityGuard {
    high_ticks: u32,
}

impl HumidityGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn high_ticks(&self) -> u32 {
        self.high_ticks
    }

    pub fn reset(&mut self) {
        self.high_ticks = 0;
    }

    /// Account one tick of `rh_in`.
    pub fn observe(&mut self, rh_in: f64, cfg: &DeviceConfig) {
        if rh_in >= cfg.rh_alert {
            self.high_ticks = self.high_ticks.saturating_add(1);
        } else {
            self.high_ticks = 0;
        }
    }

    pub fn dwell_elapsed(&self, cfg: &DeviceConfig) -> bool {
        self.high_ticks >= cfg.ticks_for(cfg.rh_alert_dwell_s).max(1)
    }

    /// Observe one tick and decide. Fires only from humidity monitoring.
    pub fn tick(&mut self, rh_in: f64, mode: DeviceMode, cfg: &DeviceConfig) -> GuardOutcome {
        self.observe(rh_in, cfg);
        if mode == DeviceMode::HumidityMonitoring && self.dwell_elapsed(cfg) {
            self.high_ticks = 0;
            GuardOutcome {
                alert: true,
                commands: vec![MotorCommand::slack(Motor::Left), MotorCommand::slack(Motor::Right)],
                mode: DeviceMode::DoffAlerted,
            }
        } else {
            GuardOutcome {
                alert: false,
                commands: Vec::new(),
                mode,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay(trace: &[(f64, u32)]) -> Option<u32> {
        let cfg = DeviceConfig::default();
        let mut g = HumidityGuard::new();
        let mut tick = 0;
        for &(rh, n) in trace {
            for _ in 0..n {
                tick += 1;
                if g.tick(rh, DeviceMode::HumidityMonitoring, &cfg).alert {
                    return Some(tick);
                }
            }
        }
        None
    }

    #[test]
    fn below_threshold_is_quiet() {
        let cfg = DeviceConfig::default();
        let mut g = HumidityGuard::new();
        let out = g.tick(0.5, DeviceMode::HumidityMonitoring, &cfg);
        assert!(!out.alert && out.commands.is_empty());
        assert_eq!(out.mode, DeviceMode::HumidityMonitoring);
    }

    #[test]
    fn fires_after_thirty_seconds() {
        assert_eq!(replay(&[(0.95, 400)]), Some(300));
        let cfg = DeviceConfig::default();
        let mut g = HumidityGuard::new();
        let mut last = None;
        for _ in 0..300 {
            last = Some(g.tick(0.95, DeviceMode::HumidityMonitoring, &cfg));
        }
        let out = last.unwrap();
        assert!(out.alert);
        assert_eq!(out.mode, DeviceMode::DoffAlerted);
        assert_eq!(
            out.commands,
            vec![MotorCommand::slack(Motor::Left), MotorCommand::slack(Motor::Right)]
        );
    }

    #[test]
    fn dwell_resets_on_dip() {
        assert_eq!(replay(&[(0.95, 100), (0.5, 1), (0.95, 299)]), None);
        assert_eq!(replay(&[(0.95, 100), (0.5, 1), (0.95, 300)]), Some(401));
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(replay(&[(0.90, 300)]), Some(300));
        assert_eq!(replay(&[(0.8999, 1000)]), None);
    }

    #[test]
    fn only_fires_while_monitoring() {
        let cfg = DeviceConfig::default();
        let mut g = HumidityGuard::new();
        for _ in 0..400 {
            assert!(!g.tick(0.97, DeviceMode::SelfFitAdjusting, &cfg).alert);
        }
        assert!(g.tick(0.97, DeviceMode::HumidityMonitoring, &cfg).alert);
    }
}
