use crate::types::FitColor;

use super::config::{DeviceConfig, FitThresholds};
use super::FirmwareError;

/// Color of a calibrated, normalized contact signal.
pub fn classify_fit(normalized: f64, cfg: &DeviceConfig) -> Result<FitColor, FirmwareError> {
    if !normalized.is_finite() {
        return Err(FirmwareError::SensorFault(None));
    }
    Ok(band_of(normalized, &cfg.thresholds))
}

fn band_of(n: f64, t: &FitThresholds) -> FitColor {
    if n < t.red_below {
        FitColor::Red
    } else if n < t.yellow_below {
        FitColor::Yellow
    } else if n <= t.green_upto {
        FitColor::Green
    } else {
        FitColor::DarkGray
    }
}

/// Interval `[lo, hi)` of a color; green is closed at the top.
fn interval(color: FitColor, t: &FitThresholds) -> (f64, f64) {
    match color {
        FitColor::Red => (f64::NEG_INFINITY, t.red_below),
        FitColor::Yellow => (t.red_below, t.yellow_below),
        FitColor::Green => (t.yellow_below, t.green_upto),
        FitColor::DarkGray => (t.green_upto, f64::INFINITY),
    }
}

/// Keep `previous` while the signal stays within `hysteresis_band` of its
/// interval; otherwise classify afresh.
pub fn classify_with_hysteresis(
    normalized: f64,
    previous: FitColor,
    cfg: &DeviceConfig,
) -> Result<FitColor, FirmwareError> {
    let fresh = classify_fit(normalized, cfg)?;
    let (lo, hi) = interval(previous, &cfg.thresholds);
    let band = cfg.hysteresis_band;
    if normalized >= lo - band && normalized <= hi + band {
        Ok(previous)
    } else {
        Ok(fresh)
    }
}
