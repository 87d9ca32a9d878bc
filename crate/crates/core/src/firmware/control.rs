use serde::{Deserialize, Serialize};

use crate::protocol::{Message, SLACK_STEP};
use crate::seal::POINTS;
use crate::types::{DeviceMode, FitColor, Motor};

use super::config::DeviceConfig;

/// One strap actuation. Positive steps tighten; [`SLACK_STEP`] releases the
/// strap entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub motor: Motor,
    pub step: i8,
}

impl MotorCommand {
    pub fn tighten(motor: Motor) -> Self {
        Self { motor, step: 1 }
    }

    pub fn loosen(motor: Motor) -> Self {
        Self { motor, step: -1 }
    }

    pub fn slack(motor: Motor) -> Self {
        Self {
            motor,
            step: SLACK_STEP,
        }
    }

    pub fn is_slack(&self) -> bool {
        self.step == SLACK_STEP
    }

    pub fn to_message(self) -> Message {
        Message::MotorCommand {
            motor: self.motor,
            step: self.step,
        }
    }
}

/// Decision for one strap given the colors of the points it loads:
/// over-fit loosens, otherwise any under-fit tightens.
pub fn side_step<'a>(colors: impl IntoIterator<Item = &'a FitColor>) -> i8 {
    let mut under = false;
    for c in colors {
        match c {
            FitColor::DarkGray => return -1,
            FitColor::Red | FitColor::Yellow => under = true,
            FitColor::Green => {}
        }
    }
    i8::from(under)
}

/// Which sensing points each strap motor loads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl Default for SensorLayout {
    fn default() -> Self {
        Self {
            left: vec![0, 1, 2, 3],
            right: vec![4, 5, 6, 7],
        }
    }
}

/// Closed-loop strap controller with an all-green settle dwell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FitController {
    green_streak: u32,
}

impl FitController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn green_streak(&self) -> u32 {
        self.green_streak
    }

    pub fn reset(&mut self) {
        self.green_streak = 0;
    }

    /// Commands for this tick and the resulting mode. Modes other than
    /// the two wearing modes pass through untouched.
    pub fn tick(
        &mut self,
        colors: &[FitColor; POINTS],
        mode: DeviceMode,
        layout: &SensorLayout,
        cfg: &DeviceConfig,
    ) -> (Vec<MotorCommand>, DeviceMode) {
        if !mode.is_wearing() {
            return (Vec::new(), mode);
        }
        let mut cmds = Vec::new();
        for (motor, points) in [(Motor::Left, &layout.left), (Motor::Right, &layout.right)] {
            let step = side_step(points.iter().map(|&i| &colors[i]));
            if step != 0 {
                cmds.push(MotorCommand { motor, step });
            }
        }
        let all_green = colors.iter().all(|c| *c == FitColor::Green);
        let next = match mode {
            DeviceMode::SelfFitAdjusting if all_green => {
                self.green_streak += 1;
                if self.green_streak >= cfg.settle_ticks {
                    DeviceMode::HumidityMonitoring
                } else {
                    mode
                }
            }
            DeviceMode::SelfFitAdjusting => {
                self.green_streak = 0;
                mode
            }
            DeviceMode::HumidityMonitoring if !all_green => {
                self.green_streak = 0;
                DeviceMode::SelfFitAdjusting
            }
            _ => mode,
        };
        (cmds, next)
    }
}
