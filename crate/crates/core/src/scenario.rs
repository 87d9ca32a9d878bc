//! Scenario files: who wears the respirator, where, and what they do.
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//! seed = 7
//! tick_budget = 200
//!
//! [face]
//! offsets = [1.0e-3, 1.0e-3, 1.0e-3, 1.0e-3, 1.0e-3, 1.0e-3, 1.0e-3, 1.0e-3]
//!
//! [straps]
//! initial_tension_n = 2.5
//!
//! [[timeline]]
//! phase = "calibrate"
//!
//! [[timeline]]
//! phase = "don"
//! settle_s = 20.0
//!
//! [[timeline]]
//! phase = "exercise"
//! activity = "head_side_to_side"
//! duration_s = 60.0
//!
//! [[commands]]
//! at_s = 30.0
//! send = "tighten_left"
//! ```
//!
//! Every table is optional except `timeline`. Unknown keys are rejected and
//! every error names the line it refers to.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::firmware::DeviceConfig;
use crate::params::ModelParams;
use crate::seal::{ActivityKind, ActivityScenario, Environment, FaceProfile};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Syntax or type error; the message carries the position.
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Straps {
    /// Tension both straps sit at when the respirator is put on, N.
    pub initial_tension_n: f64,
    pub tension_max_n: f64,
    /// Tension change per motor step, N.
    pub tension_per_step_n: f64,
}

impl Default for Straps {
    fn default() -> Self {
        Self {
            initial_tension_n: 2.75,
            tension_max_n: 8.0,
            tension_per_step_n: 0.1,
        }
    }
}

/// How the simulated wearer reacts to the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Wearer {
    /// Take the respirator off when the device raises a doff alert.
    pub doff_on_alert: bool,
    pub reaction_s: f64,
}

impl Default for Wearer {
    fn default() -> Self {
        Self {
            doff_on_alert: true,
            reaction_s: 2.0,
        }
    }
}

/// Humidity staircase for the bare humidity element: each level is held for
/// `step_s`, then purged at `purge_c` in dry air for `purge_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Staircase {
    pub levels: Vec<f64>,
    pub step_s: f64,
    pub purge_s: f64,
    pub purge_c: f64,
}

impl Default for Staircase {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            step_s: 300.0,
            purge_s: 300.0,
            purge_c: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase {
    /// Unworn calibration; ends when the device acknowledges.
    Calibrate {
        #[serde(default = "default_calibrate_timeout")]
        timeout_s: f64,
    },
    /// Put the respirator on and breathe normally.
    Don {
        #[serde(default = "default_settle")]
        settle_s: f64,
    },
    /// One fit-test exercise; contributes a row to the fit factor table.
    Exercise {
        activity: ActivityKind,
        duration_s: f64,
        amplitude_mm: Option<f64>,
        period_s: Option<f64>,
        breath_rate: Option<f64>,
        tidal_volume_l: Option<f64>,
    },
    /// Ordinary wear, not scored.
    Wear {
        duration_s: f64,
        #[serde(default = "default_activity")]
        activity: ActivityKind,
        amplitude_mm: Option<f64>,
        period_s: Option<f64>,
        breath_rate: Option<f64>,
        tidal_volume_l: Option<f64>,
    },
    Doff { duration_s: f64 },
}

fn default_calibrate_timeout() -> f64 {
    10.0
}

fn default_settle() -> f64 {
    20.0
}

fn default_activity() -> ActivityKind {
    ActivityKind::NormalBreathing
}

/// Breathing and head-motion defaults of each exercise kind.
pub fn activity_defaults(kind: ActivityKind) -> ActivityScenario {
    let base = ActivityScenario {
        kind,
        ..ActivityScenario::normal()
    };
    match kind {
        ActivityKind::NormalBreathing => base,
        ActivityKind::DeepBreathing => ActivityScenario {
            breath_rate: 10.0,
            tidal_volume: 0.8,
            ..base
        },
        ActivityKind::HeadSideToSide => ActivityScenario {
            perturbation_amplitude: 0.12e-3,
            perturbation_period: 4.0,
            ..base
        },
        ActivityKind::HeadUpDown => ActivityScenario {
            perturbation_amplitude: 0.32e-3,
            perturbation_period: 4.0,
            ..base
        },
    }
}

impl Phase {
    pub fn duration_s(&self) -> Option<f64> {
        match self {
            Phase::Calibrate { .. } => None,
            Phase::Don { settle_s } => Some(*settle_s),
            Phase::Exercise { duration_s, .. }
            | Phase::Wear { duration_s, .. }
            | Phase::Doff { duration_s } => Some(*duration_s),
        }
    }

    pub fn is_worn(&self) -> bool {
        matches!(self, Phase::Don { .. } | Phase::Exercise { .. } | Phase::Wear { .. })
    }

    /// Activity in effect during this phase, if worn.
    pub fn activity(&self) -> Option<ActivityScenario> {
        let build = |kind, amplitude_mm: &Option<f64>, period_s: &Option<f64>, rate: &Option<f64>, tidal: &Option<f64>| {
            let d = activity_defaults(kind);
            ActivityScenario {
                kind,
                perturbation_amplitude: amplitude_mm.map_or(d.perturbation_amplitude, |a| a * 1e-3),
                perturbation_period: period_s.unwrap_or(d.perturbation_period),
                breath_rate: rate.unwrap_or(d.breath_rate),
                tidal_volume: tidal.unwrap_or(d.tidal_volume),
            }
        };
        match self {
            Phase::Calibrate { .. } | Phase::Doff { .. } => None,
            Phase::Don { .. } => Some(ActivityScenario::normal()),
            Phase::Exercise {
                activity,
                amplitude_mm,
                period_s,
                breath_rate,
                tidal_volume_l,
                ..
            }
            | Phase::Wear {
                activity,
                amplitude_mm,
                period_s,
                breath_rate,
                tidal_volume_l,
                ..
            } => Some(build(*activity, amplitude_mm, period_s, breath_rate, tidal_volume_l)),
        }
    }
}

/// A command the app user issues at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostAction {
    TightenLeft,
    TightenRight,
    LoosenLeft,
    LoosenRight,
    SlackLeft,
    SlackRight,
    Calibrate,
    AutofitOn,
    AutofitOff,
    HeaterOn,
    HeaterOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledCommand {
    pub at_s: f64,
    pub send: HostAction,
    /// Heater target for `heater_on`, °C.
    #[serde(default)]
    pub target_c: Option<u8>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Ticks after donning within which the fit must become all-green.
    pub tick_budget: u32,
    pub autofit: bool,
    pub face: FaceProfile,
    pub straps: Straps,
    pub environment: Environment,
    pub device: DeviceConfig,
    pub model: ModelParams,
    pub wearer: Wearer,
    pub timeline: Vec<Phase>,
    pub commands: Vec<ScheduledCommand>,
    pub staircase: Option<Staircase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Spanned<u32>,
    name: Spanned<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_budget")]
    tick_budget: u32,
    #[serde(default = "default_true")]
    autofit: bool,
    face: Option<Spanned<FaceProfile>>,
    straps: Option<Spanned<Straps>>,
    environment: Option<Spanned<Environment>>,
    // Dotted sub-tables (`[model.seal]`) cannot be spanned; their lines are
    // found by header search instead.
    device: Option<DeviceConfig>,
    model: Option<ModelParams>,
    model_file: Option<Spanned<String>>,
    wearer: Option<Spanned<Wearer>>,
    timeline: Spanned<Vec<Spanned<Phase>>>,
    #[serde(default)]
    commands: Vec<Spanned<ScheduledCommand>>,
    staircase: Option<Spanned<Staircase>>,
}

fn default_budget() -> u32 {
    200
}

fn default_true() -> bool {
    true
}

/// Line of the first header opening `table` or one of its sub-tables.
fn header_line(text: &str, table: &str) -> usize {
    let plain = format!("[{table}]");
    let dotted = format!("[{table}.");
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.starts_with(&plain) || l.starts_with(&dotted)
        })
        .map_or(1, |i| i + 1)
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|b| **b == b'\n')
        .count()
        + 1
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn fail<T>(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<T, ScenarioError> {
        Err(ScenarioError::Invalid {
            line: line_of(self.text, span.start),
            message: message.into(),
        })
    }

    fn fail_at<T>(&self, table: &str, message: impl Into<String>) -> Result<T, ScenarioError> {
        Err(ScenarioError::Invalid {
            line: header_line(self.text, table),
            message: message.into(),
        })
    }

    fn check(&self, ok: bool, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<(), ScenarioError> {
        if ok {
            Ok(())
        } else {
            self.fail(span, message)
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path.parent()).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parse and validate; `base_dir` resolves `model_file`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => ScenarioError::Invalid {
                line: line_of(text, span.start),
                message: e.message().to_string(),
            },
            None => ScenarioError::Parse(e.to_string()),
        })?;
        let ck = Checker { text };

        ck.check(
            *raw.schema_version.get_ref() == SCENARIO_SCHEMA_VERSION,
            raw.schema_version.span(),
            format!(
                "unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                raw.schema_version.get_ref()
            ),
        )?;
        ck.check(!raw.name.get_ref().trim().is_empty(), raw.name.span(), "name must not be empty")?;

        let face = match raw.face {
            Some(f) => {
                if let Err(e) = f.get_ref().validate() {
                    return ck.fail(f.span(), format!("[face] {e}"));
                }
                f.into_inner()
            }
            None => FaceProfile::default(),
        };

        let straps = match raw.straps {
            Some(s) => {
                let v = s.get_ref();
                ck.check(
                    v.initial_tension_n >= 0.0 && v.tension_max_n >= 0.0 && v.tension_max_n.is_finite(),
                    s.span(),
                    "[straps] tensions must be finite and >= 0",
                )?;
                ck.check(positive(v.tension_per_step_n), s.span(), "[straps] tension_per_step_n must be > 0")?;
                s.into_inner()
            }
            None => Straps::default(),
        };

        let environment = match raw.environment {
            Some(e) => {
                if let Err(err) = e.get_ref().validate() {
                    return ck.fail(e.span(), format!("[environment] {err}"));
                }
                e.into_inner()
            }
            None => Environment::default(),
        };

        let device = match raw.device {
            Some(d) => {
                if let Err(err) = d.validate() {
                    return ck.fail_at("device", format!("[device] {err}"));
                }
                d
            }
            None => DeviceConfig::default(),
        };

        let model = match (raw.model, raw.model_file) {
            (Some(_), Some(f)) => return ck.fail(f.span(), "give either [model] or model_file, not both"),
            (Some(m), None) => {
                if let Err(err) = m.validate() {
                    return ck.fail_at("model", format!("[model] {err}"));
                }
                m
            }
            (None, Some(f)) => {
                let path = base_dir.unwrap_or(Path::new(".")).join(f.get_ref());
                let text = match std::fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) => return ck.fail(f.span(), format!("model_file {}: {e}", path.display())),
                };
                match ModelParams::from_toml(&text) {
                    Ok(m) => m,
                    Err(e) => return ck.fail(f.span(), format!("model_file {}: {e}", path.display())),
                }
            }
            (None, None) => ModelParams::default(),
        };

        let wearer = match raw.wearer {
            Some(w) => {
                let v = w.get_ref();
                ck.check(v.reaction_s >= 0.0 && v.reaction_s.is_finite(), w.span(), "[wearer] reaction_s must be >= 0")?;
                w.into_inner()
            }
            None => Wearer::default(),
        };

        ck.check(!raw.timeline.get_ref().is_empty(), raw.timeline.span(), "timeline must have at least one phase")?;
        let mut timeline = Vec::new();
        for p in raw.timeline.into_inner() {
            let span = p.span();
            let phase = p.into_inner();
            match &phase {
                Phase::Calibrate { timeout_s } => ck.check(positive(*timeout_s), span.clone(), "timeout_s must be > 0")?,
                other => {
                    let d = other.duration_s().unwrap_or(0.0);
                    ck.check(positive(d), span.clone(), "phase duration must be > 0")?;
                }
            }
            if let Some(a) = phase.activity() {
                if let Err(e) = a.validate() {
                    return ck.fail(span, e.to_string());
                }
            }
            timeline.push(phase);
        }

        let mut commands = Vec::new();
        for c in raw.commands {
            let v = c.get_ref();
            ck.check(v.at_s >= 0.0 && v.at_s.is_finite(), c.span(), "at_s must be >= 0")?;
            ck.check(
                v.target_c.is_none() || v.send == HostAction::HeaterOn,
                c.span(),
                "target_c only applies to heater_on",
            )?;
            commands.push(c.into_inner());
        }
        commands.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));

        let staircase = match raw.staircase {
            Some(s) => {
                let v = s.get_ref();
                ck.check(!v.levels.is_empty(), s.span(), "[staircase] levels must not be empty")?;
                ck.check(
                    v.levels.iter().all(|l| (0.0..=1.0).contains(l)),
                    s.span(),
                    "[staircase] levels must be fractions in [0,1]",
                )?;
                ck.check(
                    positive(v.step_s) && positive(v.purge_s) && v.purge_c.is_finite(),
                    s.span(),
                    "[staircase] step_s and purge_s must be > 0",
                )?;
                Some(s.into_inner())
            }
            None => None,
        };

        Ok(Scenario {
            name: raw.name.into_inner(),
            seed: raw.seed,
            tick_budget: raw.tick_budget,
            autofit: raw.autofit,
            face,
            straps,
            environment,
            device,
            model,
            wearer,
            timeline,
            commands,
            staircase,
        })
    }

    /// Exercise kinds in timeline order, each listed once.
    pub fn exercise_kinds(&self) -> Vec<ActivityKind> {
        let mut out = Vec::new();
        for p in &self.timeline {
            if let Phase::Exercise { activity, .. } = p {
                if !out.contains(activity) {
                    out.push(*activity);
                }
            }
        }
        out
    }

    /// Total scheduled time of the fixed-length phases, s.
    pub fn scheduled_duration_s(&self) -> f64 {
        self.timeline.iter().filter_map(Phase::duration_s).sum()
    }
}
