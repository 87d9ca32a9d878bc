//! Physics models for the sponge pressure sensor, the graphene humidity
//! element and its heater, and the two analog front ends that digitize them.
//!
//! Everything here is a pure function over value types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Reference temperature for the desorption rate constant, °C.
pub const LIG_REFERENCE_T_C: f64 = 25.0;

/// Sponge thicknesses characterized for the thickness comparison, in mm.
pub const PRESET_THICKNESSES_MM: [f64; 4] = [1.0, 1.5, 2.5, 3.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("{quantity} out of domain: {value}")]
    Domain { quantity: &'static str, value: f64 },
    #[error("explicit step unstable: rate*dt = {0:.3} (must be < 1)")]
    UnstableStep(f64),
    #[error("invalid parameter {0}")]
    InvalidParameter(&'static str),
}

fn domain(quantity: &'static str, value: f64) -> SensorError {
    SensorError::Domain { quantity, value }
}

/// Dielectric-sponge parallel-plate sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpongeSensorParams {
    /// m²
    pub plate_area: f64,
    /// m
    pub rest_thickness: f64,
    pub rel_permittivity: f64,
    /// Pa
    pub base_modulus: f64,
    /// 1/m; effective modulus grows as `1 + k·d0`.
    pub thickness_stiffening: f64,
    pub strain_cap: f64,
    pub fatigue_drift_per_cycle: f64,
}

impl Default for SpongeSensorParams {
    fn default() -> Self {
        Self {
            plate_area: 1.0e-4,
            rest_thickness: 1.0e-3,
            rel_permittivity: 2.5,
            base_modulus: 60.0e3,
            thickness_stiffening: 1000.0,
            strain_cap: 0.6,
            fatigue_drift_per_cycle: 1.0e-6,
        }
    }
}

impl SpongeSensorParams {
    /// Default sponge with the rest thickness replaced.
    pub fn with_thickness_mm(thickness_mm: f64) -> Self {
        Self {
            rest_thickness: thickness_mm * 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let positive = [
            ("plate_area", self.plate_area),
            ("rest_thickness", self.rest_thickness),
            ("rel_permittivity", self.rel_permittivity),
            ("base_modulus", self.base_modulus),
            ("thickness_stiffening", self.thickness_stiffening),
            ("strain_cap", self.strain_cap),
            ("fatigue_drift_per_cycle", self.fatigue_drift_per_cycle),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SensorError::InvalidParameter(name));
            }
        }
        if self.strain_cap >= 1.0 {
            return Err(SensorError::InvalidParameter("strain_cap"));
        }
        Ok(())
    }

    /// Rest capacitance C₀, F.
    pub fn rest_capacitance(&self) -> f64 {
        EPSILON_0 * self.rel_permittivity * self.plate_area / self.rest_thickness
    }

    /// Effective compressive modulus after `cycle_count` load cycles, Pa.
    pub fn effective_modulus(&self, cycle_count: u64) -> f64 {
        self.base_modulus
            * (1.0 + self.thickness_stiffening * self.rest_thickness)
            * (1.0 + self.fatigue_drift_per_cycle * cycle_count as f64)
    }

    /// Compressive strain under `force`, clamped at the strain cap.
    pub fn strain(&self, force: f64, cycle_count: u64) -> f64 {
        let s = force / (self.plate_area * self.effective_modulus(cycle_count));
        s.min(self.strain_cap)
    }
}

/// Capacitance of the sponge sensor under `force` newtons.
pub fn sponge_capacitance(
    params: &SpongeSensorParams,
    force: f64,
    cycle_count: u64,
) -> Result<f64, SensorError> {
    if !force.is_finite() || force < 0.0 {
        return Err(domain("force", force));
    }
    let s = params.strain(force, cycle_count);
    Ok(params.rest_capacitance() / (1.0 - s))
}

/// Normalized capacitance change ΔC/C₀ under `force`.
pub fn sponge_response(
    params: &SpongeSensorParams,
    force: f64,
    cycle_count: u64,
) -> Result<f64, SensorError> {
    let c = sponge_capacitance(params, force, cycle_count)?;
    Ok(c / params.rest_capacitance() - 1.0)
}

/// Laser-induced graphene humidity element with first-order
/// adsorption/desorption kinetics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LigSensorState {
    /// Ω
    pub base_resistance: f64,
    pub occupancy: f64,
    pub resistance_gain: f64,
    /// 1/s per unit RH
    pub k_ads: f64,
    /// 1/s at 25 °C
    pub k_des_ref: f64,
    /// 1/K
    pub desorption_activation_scale: f64,
}

impl Default for LigSensorState {
    fn default() -> Self {
        Self {
            base_resistance: 1000.0,
            occupancy: 0.0,
            resistance_gain: 0.25,
            k_ads: 0.05,
            k_des_ref: 0.005,
            desorption_activation_scale: 0.08,
        }
    }
}

impl LigSensorState {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.base_resistance > 0.0) {
            return Err(SensorError::InvalidParameter("base_resistance"));
        }
        if !(self.resistance_gain > 0.0) {
            return Err(SensorError::InvalidParameter("resistance_gain"));
        }
        if !(self.k_ads > 0.0 && self.k_des_ref > 0.0) {
            return Err(SensorError::InvalidParameter("rate constant"));
        }
        if !(0.0..=1.0).contains(&self.occupancy) {
            return Err(SensorError::InvalidParameter("occupancy"));
        }
        Ok(())
    }

    pub fn k_des(&self, temp_c: f64) -> f64 {
        self.k_des_ref * (self.desorption_activation_scale * (temp_c - LIG_REFERENCE_T_C)).exp()
    }

    pub fn resistance(&self) -> f64 {
        self.resistance_for(self.occupancy)
    }

    pub fn resistance_for(&self, occupancy: f64) -> f64 {
        self.base_resistance * (1.0 + self.resistance_gain * occupancy)
    }

    /// ΔR/R₀ at the current occupancy.
    pub fn normalized_change(&self) -> f64 {
        self.resistance_gain * self.occupancy
    }

    /// Fixed point of the kinetics at constant `rh` and `temp_c`.
    pub fn steady_occupancy(&self, rh: f64, temp_c: f64) -> f64 {
        let ads = self.k_ads * rh;
        ads / (ads + self.k_des(temp_c))
    }

    /// Humidity that would hold the element at `occupancy` in equilibrium.
    pub fn equilibrium_rh(&self, occupancy: f64, temp_c: f64) -> f64 {
        let theta = occupancy.clamp(0.0, 1.0 - 1e-9);
        (self.k_des(temp_c) * theta / (self.k_ads * (1.0 - theta))).clamp(0.0, 1.0)
    }

    /// Largest stable explicit step at `rh`/`temp_c`.
    pub fn max_stable_dt(&self, rh: f64, temp_c: f64) -> f64 {
        1.0 / (self.k_ads * rh + self.k_des(temp_c))
    }
}

/// Advance the humidity element by one explicit Euler step. Returns the new
/// state and its resistance.
pub fn lig_step(
    state: &LigSensorState,
    rh: f64,
    temp_c: f64,
    dt: f64,
) -> Result<(LigSensorState, f64), SensorError> {
    if !(0.0..=1.0).contains(&rh) {
        return Err(domain("rh", rh));
    }
    if !temp_c.is_finite() {
        return Err(domain("temp", temp_c));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(domain("dt", dt));
    }
    let k_des = state.k_des(temp_c);
    let stiffness = dt * (state.k_ads * rh + k_des);
    if stiffness >= 1.0 {
        return Err(SensorError::UnstableStep(stiffness));
    }
    let theta = state.occupancy;
    let rate = state.k_ads * rh * (1.0 - theta) - k_des * theta;
    let next = LigSensorState {
        occupancy: (theta + dt * rate).clamp(0.0, 1.0),
        ..*state
    };
    Ok((next, next.resistance()))
}

/// Magnus saturation vapour pressure over water, hPa.
pub fn saturation_vapor_pressure(temp_c: f64) -> f64 {
    6.112 * (17.62 * temp_c / (243.12 + temp_c)).exp()
}

/// Relative humidity seen at a surface held at `surface_t_c` when the
/// surrounding air at `air_t_c` has relative humidity `rh_air`.
pub fn surface_relative_humidity(rh_air: f64, air_t_c: f64, surface_t_c: f64) -> f64 {
    (rh_air * saturation_vapor_pressure(air_t_c) / saturation_vapor_pressure(surface_t_c))
        .clamp(0.0, 1.0)
}

/// Resistive graphene heater treated as an instantaneous steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeaterParams {
    /// Ω
    pub element_resistance: f64,
    /// K/W
    pub thermal_resistance: f64,
    /// °C
    pub ambient_t: f64,
}

impl Default for HeaterParams {
    /// Least-squares fit to the two (V, P, T) anchors at 6 V and 10 V.
    fn default() -> Self {
        Self {
            element_resistance: 229.27,
            thermal_resistance: 233.03,
            ambient_t: 25.0,
        }
    }
}

impl HeaterParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.element_resistance > 0.0) {
            return Err(SensorError::InvalidParameter("element_resistance"));
        }
        if !(self.thermal_resistance > 0.0) {
            return Err(SensorError::InvalidParameter("thermal_resistance"));
        }
        Ok(())
    }

    pub fn power(&self, voltage: f64) -> f64 {
        voltage * voltage / self.element_resistance
    }

    /// Voltage that holds the element at `target_c`; zero at or below ambient.
    pub fn voltage_for(&self, target_c: f64) -> f64 {
        let rise = (target_c - self.ambient_t).max(0.0);
        (rise / self.thermal_resistance * self.element_resistance).sqrt()
    }
}

/// Dissipated power (W) and element temperature (°C) at `voltage`.
pub fn heater_temperature(params: &HeaterParams, voltage: f64) -> Result<(f64, f64), SensorError> {
    if !voltage.is_finite() || voltage < 0.0 {
        return Err(domain("voltage", voltage));
    }
    let p = params.power(voltage);
    Ok((p, params.ambient_t + params.thermal_resistance * p))
}

/// Quarter-active Wheatstone bridge; the humidity element is the fourth leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub excitation_v: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub adc_bits: u32,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            excitation_v: 3.3,
            r1: 1000.0,
            r2: 1000.0,
            r3: 1000.0,
            adc_bits: 16,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        for (name, v) in [
            ("excitation_v", self.excitation_v),
            ("r1", self.r1),
            ("r2", self.r2),
            ("r3", self.r3),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SensorError::InvalidParameter(name));
            }
        }
        if !(8..=16).contains(&self.adc_bits) {
            return Err(SensorError::InvalidParameter("adc_bits"));
        }
        Ok(())
    }

    fn reference_ratio(&self) -> f64 {
        self.r2 / (self.r1 + self.r2)
    }

    fn adc_full_scale(&self) -> f64 {
        ((1u32 << self.adc_bits) - 1) as f64
    }

    /// Offset-binary ADC code of a differential bridge voltage spanning
    /// `[-V_exc/2, +V_exc/2]`.
    pub fn adc_code(&self, v_out: f64) -> u16 {
        let fs = self.adc_full_scale();
        ((v_out / self.excitation_v + 0.5) * fs).round().clamp(0.0, fs) as u16
    }

    pub fn adc_voltage(&self, code: u16) -> f64 {
        (code as f64 / self.adc_full_scale() - 0.5) * self.excitation_v
    }

    /// Invert the bridge: element resistance that produces `v_out`.
    pub fn resistance_from_output(&self, v_out: f64) -> Option<f64> {
        let x = v_out / self.excitation_v + self.reference_ratio();
        if x <= 0.0 || x >= 1.0 {
            return None;
        }
        Some(x * self.r3 / (1.0 - x))
    }
}

/// Differential output voltage of the bridge for element resistance `r_lig`.
pub fn bridge_output(cfg: &BridgeConfig, r_lig: f64) -> Result<f64, SensorError> {
    if !(r_lig.is_finite() && r_lig > 0.0) {
        return Err(domain("r_lig", r_lig));
    }
    Ok(cfg.excitation_v * (r_lig / (r_lig + cfg.r3) - cfg.reference_ratio()))
}

/// Capacitance-to-digital converter channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdcConfig {
    /// F, subtracted before conversion.
    pub offset_capacitance: f64,
    /// F, input that maps to positive full scale.
    pub full_scale_span: f64,
    pub code_bits: u32,
}

impl Default for CdcConfig {
    fn default() -> Self {
        Self {
            offset_capacitance: 2.0e-12,
            full_scale_span: 15.0e-12,
            code_bits: 16,
        }
    }
}

impl CdcConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.full_scale_span.is_finite() && self.full_scale_span > 0.0) {
            return Err(SensorError::InvalidParameter("full_scale_span"));
        }
        if !(8..=24).contains(&self.code_bits) {
            return Err(SensorError::InvalidParameter("code_bits"));
        }
        if !self.offset_capacitance.is_finite() {
            return Err(SensorError::InvalidParameter("offset_capacitance"));
        }
        Ok(())
    }

    pub fn full_scale_code(&self) -> i32 {
        (1i32 << (self.code_bits - 1)) - 1
    }

    /// Capacitance at the centre of `code`'s quantization bin.
    pub fn reconstruct(&self, code: i32) -> f64 {
        self.offset_capacitance
            + code as f64 / self.full_scale_code() as f64 * self.full_scale_span
    }
}

/// Signed, saturating conversion of `capacitance` to a code.
pub fn cdc_convert(cfg: &CdcConfig, capacitance: f64) -> i32 {
    let fs = cfg.full_scale_code();
    let x = (capacitance - cfg.offset_capacitance) / cfg.full_scale_span * fs as f64;
    if x.is_nan() {
        return 0;
    }
    x.round().clamp(-(fs as f64), fs as f64) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rest_capacitance_is_parallel_plate() {
        let p = SpongeSensorParams::default();
        // 8.8541878128e-12 * 2.5 * 1e-4 / 1e-3
        let oracle = 8.854_187_812_8e-12 * 2.5 * 1e-4 / 1e-3;
        let c = sponge_capacitance(&p, 0.0, 0).unwrap();
        assert_relative_eq!(c, oracle, max_relative = 1e-12);
        assert_relative_eq!(c, 2.2135e-12, max_relative = 1e-4);
    }

    #[test]
    fn twenty_percent_strain_gives_quarter_response() {
        let p = SpongeSensorParams::default();
        let force = 0.2 * p.plate_area * p.effective_modulus(0);
        let c = sponge_capacitance(&p, force, 0).unwrap();
        assert_relative_eq!(c / p.rest_capacitance(), 1.25, max_relative = 1e-12);
        assert_relative_eq!(sponge_response(&p, force, 0).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn thinner_sponge_responds_more() {
        let thin = SpongeSensorParams::with_thickness_mm(1.0);
        let thick = SpongeSensorParams::with_thickness_mm(3.0);
        for force in [0.01, 0.5, 2.0, 5.0] {
            let a = sponge_response(&thin, force, 0).unwrap();
            let b = sponge_response(&thick, force, 0).unwrap();
            assert!(a > b, "force {force}: {a} <= {b}");
        }
        // mid-range ratio near 2
        let r = sponge_response(&thin, 1.0, 0).unwrap() / sponge_response(&thick, 1.0, 0).unwrap();
        assert!((1.9..2.6).contains(&r), "{r}");
    }

    #[test]
    fn strain_cap_saturates() {
        let p = SpongeSensorParams::default();
        let huge = 1e6;
        let c = sponge_capacitance(&p, huge, 0).unwrap();
        assert_relative_eq!(c, p.rest_capacitance() / 0.4, max_relative = 1e-12);
        assert_eq!(c, sponge_capacitance(&p, huge * 2.0, 0).unwrap());
    }

    #[test]
    fn sponge_rejects_bad_force() {
        let p = SpongeSensorParams::default();
        assert!(sponge_capacitance(&p, -1.0, 0).is_err());
        assert!(sponge_capacitance(&p, f64::NAN, 0).is_err());
        assert!(sponge_capacitance(&p, f64::INFINITY, 0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SpongeSensorParams::default().validate().is_ok());
        let bad = SpongeSensorParams {
            strain_cap: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(LigSensorState::default().validate().is_ok());
        assert!(CdcConfig {
            code_bits: 25,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn lig_pure_desorption_returns_to_baseline() {
        let mut s = LigSensorState {
            occupancy: 0.8,
            ..Default::default()
        };
        let mut r = 0.0;
        for _ in 0..3000 {
            (s, r) = lig_step(&s, 0.0, 60.0, 0.1).unwrap();
        }
        assert!(s.occupancy < 1e-9);
        assert_relative_eq!(r, s.base_resistance, max_relative = 1e-9);
    }

    #[test]
    fn lig_reaches_analytic_fixed_point() {
        let mut s = LigSensorState::default();
        let (rh, t) = (0.55, 31.0);
        for _ in 0..20_000 {
            s = lig_step(&s, rh, t, 0.1).unwrap().0;
        }
        let k_des = 0.005 * (0.08f64 * 6.0).exp();
        let oracle = 0.05 * rh / (0.05 * rh + k_des);
        assert!((s.occupancy - oracle).abs() < 1e-6);
        assert!((s.steady_occupancy(rh, t) - oracle).abs() < 1e-12);
    }

    #[test]
    fn lig_rejects_bad_inputs() {
        let s = LigSensorState::default();
        assert!(matches!(
            lig_step(&s, 1.2, 25.0, 0.1),
            Err(SensorError::Domain { quantity: "rh", .. })
        ));
        assert!(lig_step(&s, -0.1, 25.0, 0.1).is_err());
        assert!(matches!(
            lig_step(&s, 0.5, 125.0, 0.1),
            Err(SensorError::UnstableStep(_))
        ));
    }

    #[test]
    fn purge_within_five_minutes() {
        let mut s = LigSensorState {
            occupancy: 0.9,
            ..Default::default()
        };
        for _ in 0..3000 {
            s = lig_step(&s, 0.0, 60.0, 0.1).unwrap().0;
        }
        assert!(s.normalized_change() / (1.0 + s.normalized_change()) < 0.02);
    }

    #[test]
    fn heated_surface_sees_drier_air() {
        let rh = surface_relative_humidity(0.5, 25.0, 60.0);
        assert!(rh < 0.1 && rh > 0.05, "{rh}");
        assert_relative_eq!(surface_relative_humidity(0.5, 25.0, 25.0), 0.5);
    }

    #[test]
    fn heater_at_zero_volts() {
        let (p, t) = heater_temperature(&HeaterParams::default(), 0.0).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(t, 25.0);
        assert!(heater_temperature(&HeaterParams::default(), -1.0).is_err());
    }

    #[test]
    fn heater_anchors() {
        let h = HeaterParams::default();
        let (p6, t6) = heater_temperature(&h, 6.0).unwrap();
        let (p10, t10) = heater_temperature(&h, 10.0).unwrap();
        assert!((p6 - 0.163).abs() / 0.163 < 0.06);
        assert!((t6 - 66.0).abs() / 66.0 < 0.10);
        assert!((p10 - 0.434).abs() / 0.434 < 0.06);
        assert!((t10 - 125.0).abs() / 125.0 < 0.10);
    }

    #[test]
    fn heater_inverse_voltage() {
        let h = HeaterParams::default();
        // sqrt((60 - 25) / 233.03 * 229.27)
        assert_relative_eq!(h.voltage_for(60.0), 5.868, epsilon = 2e-3);
        let (_, t) = heater_temperature(&h, h.voltage_for(60.0)).unwrap();
        assert_relative_eq!(t, 60.0, epsilon = 1e-9);
        assert_eq!(h.voltage_for(10.0), 0.0);
    }

    #[test]
    fn bridge_balanced_and_hand_value() {
        let cfg = BridgeConfig::default();
        assert_eq!(bridge_output(&cfg, 1000.0).unwrap(), 0.0);
        let v = bridge_output(&cfg, 1100.0).unwrap();
        assert_relative_eq!(v, 3.3 * (1100.0 / 2100.0 - 0.5), max_relative = 1e-12);
        assert_relative_eq!(v, 0.0786, epsilon = 1e-4);
        let open = bridge_output(&cfg, 1e15).unwrap();
        assert_relative_eq!(open, 3.3 * 0.5, epsilon = 1e-9);
        assert!(bridge_output(&cfg, 0.0).is_err());
        assert!(bridge_output(&cfg, -5.0).is_err());
    }

    #[test]
    fn bridge_inversion_roundtrip() {
        let cfg = BridgeConfig::default();
        for r in [800.0, 1000.0, 1234.5, 1500.0] {
            let v = bridge_output(&cfg, r).unwrap();
            assert_relative_eq!(cfg.resistance_from_output(v).unwrap(), r, max_relative = 1e-9);
            let code = cfg.adc_code(v);
            let back = cfg.resistance_from_output(cfg.adc_voltage(code)).unwrap();
            assert!((back - r).abs() < 0.1, "{r} -> {back}");
        }
    }

    #[test]
    fn cdc_examples() {
        let cfg = CdcConfig::default();
        assert_eq!(cdc_convert(&cfg, cfg.offset_capacitance), 0);
        assert_eq!(
            cdc_convert(&cfg, cfg.offset_capacitance + cfg.full_scale_span),
            32767
        );
        assert_eq!(cdc_convert(&cfg, cfg.offset_capacitance + 1e-9), 32767);
        assert_eq!(cdc_convert(&cfg, cfg.offset_capacitance - 1e-9), -32767);
        assert_eq!(cdc_convert(&cfg, cfg.offset_capacitance + 1.5e-12), 3277);
        assert_eq!(cdc_convert(&cfg, cfg.offset_capacitance - 1.5e-12), -3277);
    }

    #[test]
    fn cdc_requantization_is_idempotent() {
        let cfg = CdcConfig {
            code_bits: 12,
            ..Default::default()
        };
        for code in -2047..=2047 {
            assert_eq!(cdc_convert(&cfg, cfg.reconstruct(code)), code);
        }
    }
}
