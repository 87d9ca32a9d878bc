use serde::{Deserialize, Serialize};

use crate::seal::POINTS;

use super::config::DeviceConfig;
use super::FirmwareError;

/// Per-channel zero offset and gain. Gains are write-once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub offset_code: [i32; POINTS],
    pub gain: [f64; POINTS],
    pub otp_written: bool,
}

/// Result of a calibration pass on an already-programmed device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtpStatus {
    Written,
    /// Offsets updated; the stored gains were kept.
    Locked,
}

/// Calibrate from frames captured while the respirator is off the face.
/// `reference_span` is the code change that should map to 1.0.
pub fn calibrate(
    resting_frames: &[[i32; POINTS]],
    reference_span: f64,
    cfg: &DeviceConfig,
) -> Result<Calibration, FirmwareError> {
    let offset_code = resting_offsets(resting_frames, cfg)?;
    if !(reference_span.is_finite() && reference_span > 0.0) {
        return Err(FirmwareError::InvalidConfig("reference span must be > 0"));
    }
    Ok(Calibration {
        offset_code,
        gain: [1.0 / reference_span; POINTS],
        otp_written: true,
    })
}

impl Calibration {
    /// Re-run calibration. Offsets always follow the new frames; gains change
    /// only if OTP has not been written.
    pub fn recalibrate(
        &mut self,
        resting_frames: &[[i32; POINTS]],
        reference_span: f64,
        cfg: &DeviceConfig,
    ) -> Result<OtpStatus, FirmwareError> {
        if self.otp_written {
            self.offset_code = resting_offsets(resting_frames, cfg)?;
            return Ok(OtpStatus::Locked);
        }
        *self = calibrate(resting_frames, reference_span, cfg)?;
        Ok(OtpStatus::Written)
    }

    pub fn normalize(&self, channel: usize, code: i32) -> f64 {
        (code - self.offset_code[channel]) as f64 * self.gain[channel]
    }

    /// Mean gain expressed against `full_scale_code`, in unsigned 8.8.
    pub fn gain_q8_8(&self, full_scale_code: i32) -> u16 {
        let mean = self.gain.iter().sum::<f64>() / POINTS as f64;
        (mean * full_scale_code as f64 * 256.0).round().clamp(0.0, u16::MAX as f64) as u16
    }
}

fn resting_offsets(frames: &[[i32; POINTS]], cfg: &DeviceConfig) -> Result<[i32; POINTS], FirmwareError> {
    if frames.len() < cfg.calibration_frames {
        return Err(FirmwareError::CalibrationIncomplete {
            have: frames.len(),
            need: cfg.calibration_frames,
        });
    }
    let mut offsets = [0; POINTS];
    for (ch, off) in offsets.iter_mut().enumerate() {
        let mut column: Vec<i32> = frames.iter().map(|f| f[ch]).collect();
        let n = column.len() as f64;
        let mean = column.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = column.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        if var > cfg.max_rest_variance {
            return Err(FirmwareError::UnstableChannel(ch));
        }
        column.sort_unstable();
        *off = median_sorted(&column);
    }
    Ok(offsets)
}

/// Median of sorted values; even counts average the middle pair, rounding
/// toward negative infinity.
fn median_sorted(v: &[i32]) -> i32 {
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        ((v[m - 1] as i64 + v[m] as i64).div_euclid(2)) as i32
    }
}
