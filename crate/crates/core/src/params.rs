//! Model-parameter file: every physical constant the twin uses, with
//! defaults, overridable from TOML.
//!
//! ```toml
//! schema_version = 1
//! [sponge]
//! base_modulus = 60000.0
//! [seal]
//! leak_conductance = 1000.0
//! [noise]
//! pressure_code_std = 2.0
//! ```
//! Omitted tables and keys keep their defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::firmware::HardwareModel;
use crate::seal::SealParams;
use crate::sensor::{BridgeConfig, CdcConfig, HeaterParams, LigSensorState, SpongeSensorParams};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Gaussian read noise added by the simulated front ends, in codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub pressure_code_std: f64,
    pub humidity_code_std: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            pressure_code_std: 2.0,
            humidity_code_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub schema_version: u32,
    pub sponge: SpongeSensorParams,
    pub lig: LigSensorState,
    pub heater: HeaterParams,
    pub bridge: BridgeConfig,
    pub cdc: CdcConfig,
    pub seal: SealParams,
    pub noise: NoiseParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            schema_version: PARAMS_SCHEMA_VERSION,
            sponge: SpongeSensorParams::default(),
            lig: LigSensorState::default(),
            heater: HeaterParams::default(),
            bridge: BridgeConfig::default(),
            cdc: CdcConfig::default(),
            seal: SealParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

impl ModelParams {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let p: ModelParams = toml::from_str(text).map_err(|e| e.to_string())?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("model params serialize")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != PARAMS_SCHEMA_VERSION {
            return Err(format!(
                "unsupported model schema_version {} (expected {PARAMS_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.sponge.validate().map_err(|e| format!("sponge: {e}"))?;
        self.lig.validate().map_err(|e| format!("lig: {e}"))?;
        self.heater.validate().map_err(|e| format!("heater: {e}"))?;
        self.bridge.validate().map_err(|e| format!("bridge: {e}"))?;
        self.cdc.validate().map_err(|e| format!("cdc: {e}"))?;
        self.seal.validate().map_err(|e| format!("seal: {e}"))?;
        if !(self.noise.pressure_code_std >= 0.0 && self.noise.humidity_code_std >= 0.0) {
            return Err("noise: standard deviations must be >= 0".into());
        }
        Ok(())
    }

    /// The firmware's view of the same hardware.
    pub fn hardware(&self) -> HardwareModel {
        HardwareModel {
            sponge: self.sponge,
            cdc: self.cdc,
            bridge: self.bridge,
            lig: LigSensorState {
                occupancy: 0.0,
                ..self.lig
            },
            heater: self.heater,
        }
    }
}
