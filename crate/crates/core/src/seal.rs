//! The face-seal plant: strap tensions and face geometry in, contact
//! pressures, leak gaps, fit factor and in-mask humidity out.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of contact sensing points around the seal.
pub const POINTS: usize = 8;

/// Minute ventilation treated as unit inhalation factor, L/min.
pub const REFERENCE_VENTILATION_L_MIN: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SealError {
    #[error("point index sets must partition 0..{POINTS}")]
    BadPartition,
    #[error("invalid face profile: {0}")]
    BadProfile(&'static str),
    #[error("invalid environment: {0}")]
    BadEnvironment(&'static str),
    #[error("invalid activity: {0}")]
    BadActivity(&'static str),
    #[error("invalid seal parameters: {0}")]
    BadSeal(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Per-point face geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceProfile {
    /// Rest gap between each sensing point and the skin, m.
    pub offsets: [f64; POINTS],
    /// N/m
    pub stiffness: [f64; POINTS],
    pub beard_factor: f64,
    pub left_points: Vec<usize>,
    pub right_points: Vec<usize>,
    /// Points loaded by looking up; the remainder are loaded by looking down.
    pub top_points: Vec<usize>,
}

impl Default for FaceProfile {
    fn default() -> Self {
        Self {
            offsets: [1.0e-3; POINTS],
            stiffness: [2000.0; POINTS],
            beard_factor: 1.0,
            left_points: vec![0, 1, 2, 3],
            right_points: vec![4, 5, 6, 7],
            top_points: vec![0, 1, 4, 5],
        }
    }
}

impl FaceProfile {
    pub fn validate(&self) -> Result<(), SealError> {
        if self.stiffness.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(SealError::BadProfile("stiffness must be positive"));
        }
        if self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(SealError::BadProfile("offsets must be finite"));
        }
        if !(self.beard_factor >= 1.0) {
            return Err(SealError::BadProfile("beard_factor must be >= 1"));
        }
        let mut seen = [false; POINTS];
        for &i in self.left_points.iter().chain(&self.right_points) {
            if i >= POINTS || seen[i] {
                return Err(SealError::BadPartition);
            }
            seen[i] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(SealError::BadPartition);
        }
        if self.top_points.iter().any(|&i| i >= POINTS) {
            return Err(SealError::BadPartition);
        }
        Ok(())
    }

    pub fn side_of(&self, point: usize) -> Side {
        if self.left_points.contains(&point) {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn points(&self, side: Side) -> &[usize] {
        match side {
            Side::Left => &self.left_points,
            Side::Right => &self.right_points,
        }
    }

    /// A face drawn from the population used for controller convergence
    /// checks: offsets 0.8–1.15 mm, stiffness 1.8–2.2 kN/m, beard 1.0–1.05.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut offsets = [0.0; POINTS];
        let mut stiffness = [0.0; POINTS];
        for i in 0..POINTS {
            offsets[i] = rng.random_range(0.8e-3..1.15e-3);
            stiffness[i] = rng.random_range(1800.0..2200.0);
        }
        Self {
            offsets,
            stiffness,
            beard_factor: rng.random_range(1.0..1.05),
            ..Self::default()
        }
    }
}

/// Constants of the tension → pressure → gap → leak chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SealParams {
    /// m of compression per N of strap tension.
    pub compression_per_newton: f64,
    /// m²
    pub sensor_area: f64,
    /// Contact pressure that fully closes a point's gap, Pa.
    pub seal_pressure: f64,
    /// Gap area of a point with no contact, m².
    pub max_gap_area: f64,
    /// Leak conductance per m² of gap, relative to the filter's conductance.
    pub leak_conductance: f64,
    /// Humidity exchange through gaps, 1/(s·m²).
    pub leak_exchange: f64,
    /// Breath moisture source at the reference ventilation, 1/s.
    pub breath_moisture_rate: f64,
}

impl SealParams {
    pub fn validate(&self) -> Result<(), SealError> {
        for (name, v) in [
            ("compression_per_newton must be > 0", self.compression_per_newton),
            ("sensor_area must be > 0", self.sensor_area),
            ("seal_pressure must be > 0", self.seal_pressure),
            ("max_gap_area must be > 0", self.max_gap_area),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SealError::BadSeal(name));
            }
        }
        for (name, v) in [
            ("leak_conductance must be >= 0", self.leak_conductance),
            ("leak_exchange must be >= 0", self.leak_exchange),
            ("breath_moisture_rate must be >= 0", self.breath_moisture_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SealError::BadSeal(name));
            }
        }
        Ok(())
    }
}

impl Default for SealParams {
    fn default() -> Self {
        Self {
            compression_per_newton: 0.5e-3,
            sensor_area: 1.0e-4,
            seal_pressure: 15.0e3,
            max_gap_area: 5.0e-6,
            leak_conductance: 2.0e3,
            leak_exchange: 200.0,
            breath_moisture_rate: 3.0e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityKind {
    NormalBreathing,
    DeepBreathing,
    HeadSideToSide,
    HeadUpDown,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 4] = [
        ActivityKind::NormalBreathing,
        ActivityKind::DeepBreathing,
        ActivityKind::HeadSideToSide,
        ActivityKind::HeadUpDown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityKind::NormalBreathing => "normal_breathing",
            ActivityKind::DeepBreathing => "deep_breathing",
            ActivityKind::HeadSideToSide => "head_side_to_side",
            ActivityKind::HeadUpDown => "head_up_down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityScenario {
    pub kind: ActivityKind,
    /// Peak head-motion offset, m.
    pub perturbation_amplitude: f64,
    /// s
    pub perturbation_period: f64,
    /// breaths/min
    pub breath_rate: f64,
    /// L
    pub tidal_volume: f64,
}

impl ActivityScenario {
    pub fn normal() -> Self {
        Self {
            kind: ActivityKind::NormalBreathing,
            perturbation_amplitude: 0.0,
            perturbation_period: 1.0,
            breath_rate: 12.0,
            tidal_volume: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), SealError> {
        if !(self.perturbation_amplitude >= 0.0) {
            return Err(SealError::BadActivity("amplitude must be >= 0"));
        }
        if !(self.perturbation_period > 0.0) {
            return Err(SealError::BadActivity("period must be > 0"));
        }
        if !(self.breath_rate >= 0.0 && self.tidal_volume >= 0.0) {
            return Err(SealError::BadActivity("ventilation must be >= 0"));
        }
        Ok(())
    }

    /// Minute ventilation relative to quiet breathing.
    pub fn inhalation_factor(&self) -> f64 {
        self.breath_rate * self.tidal_volume / REFERENCE_VENTILATION_L_MIN
    }

    /// Signed head-motion waveform in [-1, 1]: `-cos(4πt/T)`. Positive loads
    /// the left (or top) set, negative the right (or bottom) set.
    ///
    /// | t    | 0     | T/8  | T/4  | 3T/8 | T/2   |
    /// |------|-------|------|------|------|-------|
    /// | w(t) | -1    | 0    | +1   | 0    | -1    |
    pub fn waveform(&self, t: f64) -> f64 {
        -(4.0 * PI * t / self.perturbation_period).cos()
    }
}

/// Per-point pull-away offsets (m) produced by head motion at time `t`.
pub fn apply_activity(profile: &FaceProfile, activity: &ActivityScenario, t: f64) -> [f64; POINTS] {
    let mut out = [0.0; POINTS];
    let (positive, negative): (Vec<usize>, Vec<usize>) = match activity.kind {
        ActivityKind::NormalBreathing | ActivityKind::DeepBreathing => return out,
        ActivityKind::HeadSideToSide => (profile.left_points.clone(), profile.right_points.clone()),
        ActivityKind::HeadUpDown => {
            let bottom = (0..POINTS).filter(|i| !profile.top_points.contains(i)).collect();
            (profile.top_points.clone(), bottom)
        }
    };
    let w = activity.waveform(t.max(0.0));
    let a = activity.perturbation_amplitude;
    let (set, mag) = if w >= 0.0 { (positive, w) } else { (negative, -w) };
    for i in set {
        out[i] = a * mag;
    }
    out
}

/// Contact pressure at each point, kPa.
pub fn contact_pressures(
    profile: &FaceProfile,
    params: &SealParams,
    tension_left: f64,
    tension_right: f64,
    activity_offset: &[f64; POINTS],
) -> [f64; POINTS] {
    let mut out = [0.0; POINTS];
    for (i, p) in out.iter_mut().enumerate() {
        let tension = match profile.side_of(i) {
            Side::Left => tension_left,
            Side::Right => tension_right,
        };
        let x = (params.compression_per_newton * tension
            - profile.offsets[i] * profile.beard_factor
            - activity_offset[i])
            .max(0.0);
        *p = profile.stiffness[i] * x / params.sensor_area / 1000.0;
    }
    out
}

/// Residual leak gap (m²) of a point at `pressure_kpa`.
pub fn gap_area(params: &SealParams, pressure_kpa: f64) -> f64 {
    let open = (1.0 - pressure_kpa * 1000.0 / params.seal_pressure).max(0.0);
    params.max_gap_area * open * open
}

pub fn gap_areas(params: &SealParams, pressures_kpa: &[f64; POINTS]) -> [f64; POINTS] {
    pressures_kpa.map(|p| gap_area(params, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Environment {
    pub ambient_rh: f64,
    pub ambient_t: f64,
    /// #/cm³
    pub ambient_particle_conc: f64,
    pub filter_efficiency: f64,
    pub rh_in: f64,
    pub in_mask_particle_conc: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            ambient_rh: 0.4,
            ambient_t: 25.0,
            ambient_particle_conc: 5000.0,
            filter_efficiency: 0.99,
            rh_in: 0.4,
            in_mask_particle_conc: 5000.0,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), SealError> {
        for (name, v) in [
            ("ambient_rh", self.ambient_rh),
            ("rh_in", self.rh_in),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SealError::BadEnvironment(name));
            }
        }
        if !(0.0..1.0).contains(&self.filter_efficiency) {
            return Err(SealError::BadEnvironment("filter_efficiency must be in [0,1)"));
        }
        if !(self.ambient_particle_conc >= 0.0 && self.in_mask_particle_conc >= 0.0) {
            return Err(SealError::BadEnvironment("concentrations must be >= 0"));
        }
        Ok(())
    }
}

/// Share of inhaled flow that bypasses the filter through seal gaps.
pub fn leak_fraction(params: &SealParams, gaps: &[f64; POINTS], activity: &ActivityScenario) -> f64 {
    let total: f64 = gaps.iter().map(|g| g.max(0.0)).sum();
    let g_leak = params.leak_conductance * total * activity.inhalation_factor();
    g_leak / (g_leak + 1.0)
}

/// Fit factor for a given bypass share: `1 / (f + (1 - f)(1 - η))`.
pub fn fit_factor_from_leak(leak: f64, filter_efficiency: f64) -> f64 {
    let penetration = leak + (1.0 - leak) * (1.0 - filter_efficiency);
    1.0 / penetration
}

pub fn fit_factor(
    env: &Environment,
    params: &SealParams,
    gaps: &[f64; POINTS],
    activity: &ActivityScenario,
) -> f64 {
    fit_factor_from_leak(leak_fraction(params, gaps, activity), env.filter_efficiency)
}

/// One explicit step of in-mask humidity while worn.
pub fn humidity_step(
    env: &Environment,
    params: &SealParams,
    gaps: &[f64; POINTS],
    activity: &ActivityScenario,
    dt: f64,
) -> Environment {
    let b = params.breath_moisture_rate * activity.inhalation_factor();
    let total_gap: f64 = gaps.iter().sum();
    let d = b * (1.0 - env.rh_in) - params.leak_exchange * total_gap * (env.rh_in - env.ambient_rh);
    let rh_in = (env.rh_in + dt * d).clamp(env.ambient_rh, 1.0);
    let ff = fit_factor(env, params, gaps, activity);
    Environment {
        rh_in,
        in_mask_particle_conc: env.ambient_particle_conc / ff,
        ..*env
    }
}

/// Strap tensions and the latest outputs of the seal chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SealState {
    pub tension_left: f64,
    pub tension_right: f64,
    pub contact_pressure: [f64; POINTS],
    pub gap_area: [f64; POINTS],
    pub time: f64,
}

impl SealState {
    pub fn new(tension: f64) -> Self {
        Self {
            tension_left: tension,
            tension_right: tension,
            contact_pressure: [0.0; POINTS],
            gap_area: [0.0; POINTS],
            time: 0.0,
        }
    }

    pub fn tension(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.tension_left,
            Side::Right => self.tension_right,
        }
    }

    pub fn tension_mut(&mut self, side: Side) -> &mut f64 {
        match side {
            Side::Left => &mut self.tension_left,
            Side::Right => &mut self.tension_right,
        }
    }

    /// Recompute pressures and gaps for the current tensions.
    pub fn settle(
        &mut self,
        profile: &FaceProfile,
        params: &SealParams,
        activity_offset: &[f64; POINTS],
    ) {
        self.contact_pressure = contact_pressures(
            profile,
            params,
            self.tension_left,
            self.tension_right,
            activity_offset,
        );
        self.gap_area = gap_areas(params, &self.contact_pressure);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slack_straps_have_no_pressure() {
        let p = contact_pressures(
            &FaceProfile::default(),
            &SealParams::default(),
            0.0,
            0.0,
            &[0.0; POINTS],
        );
        assert_eq!(p, [0.0; POINTS]);
    }

    #[test]
    fn symmetric_profile_symmetric_pressure() {
        let p = contact_pressures(
            &FaceProfile::default(),
            &SealParams::default(),
            3.3,
            3.3,
            &[0.0; POINTS],
        );
        assert_eq!(p[..4], p[4..]);
    }

    #[test]
    fn pressure_hand_value() {
        // x = 0.5 mm/N * 4 N - 1 mm = 1 mm; p = 2000 * 0.001 / 1e-4 Pa
        let p = contact_pressures(
            &FaceProfile::default(),
            &SealParams::default(),
            4.0,
            4.0,
            &[0.0; POINTS],
        );
        for v in p {
            assert_relative_eq!(v, 20.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn gap_law() {
        let s = SealParams::default();
        assert_relative_eq!(gap_area(&s, 0.0), 5e-6);
        assert_eq!(gap_area(&s, 15.0), 0.0);
        assert_eq!(gap_area(&s, 40.0), 0.0);
        assert_relative_eq!(gap_area(&s, 7.5), 5e-6 * 0.25, max_relative = 1e-12);
    }

    #[test]
    fn sealed_fit_factor_is_filter_limit() {
        let env = Environment {
            filter_efficiency: 0.95,
            ..Default::default()
        };
        let ff = fit_factor(&env, &SealParams::default(), &[0.0; POINTS], &ActivityScenario::normal());
        assert_relative_eq!(ff, 20.0, max_relative = 1e-12);
    }

    #[test]
    fn transparent_filter_fit_factor_is_one() {
        let env = Environment {
            filter_efficiency: 0.0,
            ..Default::default()
        };
        let ff = fit_factor(&env, &SealParams::default(), &[1e-6; POINTS], &ActivityScenario::normal());
        assert_relative_eq!(ff, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn half_bypass() {
        let env = Environment {
            filter_efficiency: 0.95,
            ..Default::default()
        };
        let s = SealParams::default();
        // leak conductance * total gap = 1 → half the flow bypasses
        let gaps = [1.0 / s.leak_conductance / POINTS as f64; POINTS];
        let act = ActivityScenario::normal();
        assert_relative_eq!(leak_fraction(&s, &gaps, &act), 0.5, max_relative = 1e-12);
        let ff = fit_factor(&env, &s, &gaps, &act);
        assert_relative_eq!(1.0 / ff, 0.525, max_relative = 1e-12);
        assert!((ff - 1.90).abs() < 0.01);
    }

    #[test]
    fn humidity_hand_value() {
        let env = Environment {
            rh_in: 0.5,
            ambient_rh: 0.3,
            ..Default::default()
        };
        let s = SealParams {
            breath_moisture_rate: 0.01,
            ..Default::default()
        };
        let next = humidity_step(&env, &s, &[0.0; POINTS], &ActivityScenario::normal(), 1.0);
        assert_relative_eq!(next.rh_in, 0.505, max_relative = 1e-12);
    }

    #[test]
    fn humidity_equilibrium_without_breath() {
        let env = Environment {
            rh_in: 0.4,
            ambient_rh: 0.4,
            ..Default::default()
        };
        let s = SealParams::default();
        let still = ActivityScenario {
            breath_rate: 0.0,
            ..ActivityScenario::normal()
        };
        let next = humidity_step(&env, &s, &[1e-6; POINTS], &still, 1.0);
        assert_eq!(next.rh_in, 0.4);
    }

    #[test]
    fn sealed_humidity_saturates() {
        let mut env = Environment::default();
        let s = SealParams::default();
        for _ in 0..100_000 {
            env = humidity_step(&env, &s, &[0.0; POINTS], &ActivityScenario::normal(), 0.1);
        }
        assert!(env.rh_in > 0.999);
    }

    fn side_to_side() -> ActivityScenario {
        ActivityScenario {
            kind: ActivityKind::HeadSideToSide,
            perturbation_amplitude: 0.5e-3,
            perturbation_period: 8.0,
            ..ActivityScenario::normal()
        }
    }

    #[test]
    fn breathing_has_no_offsets() {
        let f = FaceProfile::default();
        for t in [0.0, 1.3, 7.9] {
            assert_eq!(apply_activity(&f, &ActivityScenario::normal(), t), [0.0; POINTS]);
        }
    }

    #[test]
    fn side_to_side_phase_table() {
        let f = FaceProfile::default();
        let a = side_to_side();
        let quarter = apply_activity(&f, &a, 2.0);
        for i in 0..4 {
            assert_relative_eq!(quarter[i], 0.5e-3, max_relative = 1e-12);
            assert_eq!(quarter[i + 4], 0.0);
        }
        let half = apply_activity(&f, &a, 4.0);
        for i in 0..4 {
            assert_eq!(half[i], 0.0);
            assert_relative_eq!(half[i + 4], 0.5e-3, max_relative = 1e-12);
        }
        let eighth = apply_activity(&f, &a, 1.0);
        assert!(eighth.iter().all(|x| x.abs() < 1e-15));
        // |w| pattern at an arbitrary phase
        let t = 2.7;
        let w = -(4.0 * PI * t / 8.0).cos();
        let o = apply_activity(&f, &a, t);
        assert_relative_eq!(o[0], 0.5e-3 * w.abs(), max_relative = 1e-12);
    }

    #[test]
    fn up_down_uses_top_bottom() {
        let f = FaceProfile::default();
        let a = ActivityScenario {
            kind: ActivityKind::HeadUpDown,
            ..side_to_side()
        };
        let o = apply_activity(&f, &a, 2.0);
        assert_eq!(o.map(|x| x > 0.0), [true, true, false, false, true, true, false, false]);
    }

    #[test]
    fn profile_validation() {
        assert!(FaceProfile::default().validate().is_ok());
        let overlap = FaceProfile {
            right_points: vec![3, 4, 5, 6],
            ..Default::default()
        };
        assert_eq!(overlap.validate(), Err(SealError::BadPartition));
        let beardless = FaceProfile {
            beard_factor: 0.9,
            ..Default::default()
        };
        assert!(beardless.validate().is_err());
    }
}
