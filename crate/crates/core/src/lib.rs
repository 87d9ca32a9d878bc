//! Digital twin of a sensor-feedback, self-tightening N95 respirator.
//!
//! Layers, bottom up: [`sensor`] physics, the [`seal`] plant, the
//! [`firmware`] state machine, the [`protocol`] framing, and [`sim`], which
//! ticks all of them together from a [`scenario`] file.

pub mod firmware;
pub mod fitting;
pub mod params;
pub mod protocol;
pub mod scenario;
pub mod seal;
pub mod sensor;
pub mod sim;
pub mod types;

pub use firmware::{DeviceConfig, Firmware, MotorCommand};
pub use protocol::{Message, MessageKind};
pub use seal::{ActivityKind, ActivityScenario, Environment, FaceProfile, SealParams, SealState, POINTS};
pub use types::{AlertCode, DeviceMode, FitColor, Motor};
