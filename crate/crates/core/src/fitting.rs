//! Least-squares heater fit to measured (voltage, power, temperature) points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::HeaterParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeaterAnchor {
    pub voltage: f64,
    /// W
    pub power: f64,
    /// °C
    pub temp_c: f64,
}

/// The two published operating points of the graphene heater.
pub const PUBLISHED_ANCHORS: [HeaterAnchor; 2] = [
    HeaterAnchor {
        voltage: 6.0,
        power: 0.163,
        temp_c: 66.0,
    },
    HeaterAnchor {
        voltage: 10.0,
        power: 0.434,
        temp_c: 125.0,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorResidual {
    pub anchor: HeaterAnchor,
    pub predicted_power: f64,
    pub predicted_temp_c: f64,
    /// (predicted − measured) / measured
    pub power_rel_error: f64,
    pub temp_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeaterFit {
    pub element_resistance: f64,
    pub thermal_resistance: f64,
    pub ambient_t: f64,
    pub residuals: Vec<AnchorResidual>,
}

impl HeaterFit {
    pub fn params(&self) -> HeaterParams {
        HeaterParams {
            element_resistance: self.element_resistance,
            thermal_resistance: self.thermal_resistance,
            ambient_t: self.ambient_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 2 anchor points, got {0}")]
    TooFewAnchors(usize),
    #[error("degenerate anchors: all voltages equal")]
    Degenerate,
    #[error("anchor {0} is not finite and positive")]
    BadAnchor(usize),
}

/// Fit `P = V²/Rh` and `T = ambient + θ·P` by least squares through the
/// origin of each relation.
pub fn fit_heater_params(anchors: &[HeaterAnchor], ambient_t: f64) -> Result<HeaterFit, FitError> {
    if anchors.len() < 2 {
        return Err(FitError::TooFewAnchors(anchors.len()));
    }
    for (i, a) in anchors.iter().enumerate() {
        if !(a.voltage > 0.0 && a.power > 0.0 && a.voltage.is_finite() && a.power.is_finite() && a.temp_c.is_finite()) {
            return Err(FitError::BadAnchor(i));
        }
    }
    let v0 = anchors[0].voltage;
    if anchors.iter().all(|a| a.voltage == v0) {
        return Err(FitError::Degenerate);
    }
    let (mut v2p, mut v4, mut pt, mut p2) = (0.0, 0.0, 0.0, 0.0);
    for a in anchors {
        let v2 = a.voltage * a.voltage;
        v2p += v2 * a.power;
        v4 += v2 * v2;
        pt += a.power * (a.temp_c - ambient_t);
        p2 += a.power * a.power;
    }
    let conductance = v2p / v4;
    let theta = pt / p2;
    let element_resistance = 1.0 / conductance;
    let residuals = anchors
        .iter()
        .map(|&a| {
            let p = a.voltage * a.voltage / element_resistance;
            let t = ambient_t + theta * p;
            AnchorResidual {
                anchor: a,
                predicted_power: p,
                predicted_temp_c: t,
                power_rel_error: (p - a.power) / a.power,
                temp_rel_error: (t - a.temp_c) / a.temp_c,
            }
        })
        .collect();
    Ok(HeaterFit {
        element_resistance,
        thermal_resistance: theta,
        ambient_t,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_parameters() {
        let (r, th) = (180.0, 310.0);
        let anchors: Vec<HeaterAnchor> = [2.0, 5.0, 9.0]
            .iter()
            .map(|&v| {
                let p = v * v / r;
                HeaterAnchor {
                    voltage: v,
                    power: p,
                    temp_c: 25.0 + th * p,
                }
            })
            .collect();
        let fit = fit_heater_params(&anchors, 25.0).unwrap();
        assert!((fit.element_resistance - r).abs() < 1e-9);
        assert!((fit.thermal_resistance - th).abs() < 1e-9);
        assert!(fit.residuals.iter().all(|x| x.power_rel_error.abs() < 1e-12));
    }

    #[test]
    fn rejects_degenerate_sets() {
        let a = PUBLISHED_ANCHORS[0];
        assert_eq!(fit_heater_params(&[a], 25.0), Err(FitError::TooFewAnchors(1)));
        assert_eq!(fit_heater_params(&[a, a], 25.0), Err(FitError::Degenerate));
        let bad = HeaterAnchor { power: f64::NAN, ..a };
        assert_eq!(fit_heater_params(&[a, bad], 25.0), Err(FitError::BadAnchor(1)));
    }
}
