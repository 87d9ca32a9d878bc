//! Batch front end: scenario runs, the fit test and heater fitting.
//!
//! Scenario runs go through an in-process hub so every device frame is
//! ingested and stored exactly as a live session would be. All files land
//! under the output directory:
//!
//! | command    | files |
//! |------------|-------|
//! | run        | `trace.csv`, `summary.json`, `hub/` |
//! | fit-test   | `fit_test.json`, `fit_test.csv`, `trace_autofit_{on,off}.csv`, `summary_autofit_{on,off}.json`, `hub/` |
//! | fit-heater | `heater_fit.json` |
//!
//! `--emit-plots` adds `fit_factor.svg` and `humidity.svg`.

pub mod plot;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use maskloop_core::fitting::{fit_heater_params, HeaterAnchor, HeaterFit};
use maskloop_core::scenario::{Scenario, ScenarioError};
use maskloop_core::sim::{fit_test_with, FitTestTable, RunOutcome, RunSummary, SimError, Simulation, TraceRow};
use maskloop_hub::{Clock, Hub, HubConfig, HubLink, SessionInfo};
use serde::Serialize;
use thiserror::Error;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FIT_TEST_JSON: &str = "fit_test.json";
pub const FIT_TEST_CSV: &str = "fit_test.csv";
pub const HEATER_FIT_FILE: &str = "heater_fit.json";
pub const FIT_FACTOR_SVG: &str = "fit_factor.svg";
pub const HUMIDITY_SVG: &str = "humidity.svg";
pub const HUB_DIR: &str = "hub";

#[derive(Debug, Error)]
pub enum CliError {
    /// The scenario failed to load or validate.
    #[error("{0}")]
    Scenario(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0:#}")]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
        SimError::MissingExercises(_) => CliError::Scenario(e.to_string()),
        other => CliError::Other(other.into()),
    }
}

/// Load a scenario; validation errors read `path:line: message`.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::from_file(path).map_err(|e| {
        CliError::Scenario(match e {
            ScenarioError::Invalid { line, message } => format!("{}:{line}: {message}", path.display()),
            other => other.to_string(),
        })
    })
}

/// Command-line settings that replace scenario fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tick_budget: Option<u32>,
    pub no_autofit: bool,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) {
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(budget) = self.tick_budget {
            sc.tick_budget = budget;
        }
        if self.no_autofit {
            sc.autofit = false;
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub out: PathBuf,
    pub emit_plots: bool,
}

/// `summary.json`: the run summary plus what the hub stored.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub hub: SessionInfo,
}

/// `fit_test.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FitTestReport {
    #[serde(flatten)]
    pub table: FitTestTable,
    pub hub_sessions: Vec<SessionInfo>,
}

pub fn device_id(sc: &Scenario) -> String {
    format!("twin-{}-{}", sc.name, sc.seed)
}

/// A hub rooted at `<out>/hub`, emptied first so reruns write identical bytes.
fn fresh_hub(out: &Path) -> anyhow::Result<Arc<Hub>> {
    let dir = out.join(HUB_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let mut cfg = HubConfig::new(dir);
    cfg.clock = Clock::Fixed(0);
    cfg.fsync = false;
    Ok(Arc::new(Hub::open(cfg)?))
}

fn close_session(hub: &Hub, id: &str) -> anyhow::Result<SessionInfo> {
    hub.detach_device(id)?;
    hub.close_session(id)?;
    hub.flush()?;
    Ok(hub.session_info(id)?)
}

fn prepare_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Run one scenario through the hub and write its trace and summary.
///
/// On non-convergence the partial trace is still written before the error
/// is returned.
pub fn run_scenario(sc: Scenario, opts: &OutputOptions) -> Result<RunReport, CliError> {
    prepare_out(&opts.out)?;
    let hub = fresh_hub(&opts.out)?;
    let link = HubLink::open(hub.clone(), &device_id(&sc)).context("opening hub session")?;
    let sid = link.session_id().to_string();
    let mut sim = Simulation::with_link(sc, link).map_err(sim_err)?;
    let stepped = loop {
        match sim.step() {
            Ok(true) => {}
            Ok(false) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    let rows = sim.rows().to_vec();
    let outcome = match stepped.and_then(|()| sim.finish()) {
        Ok(o) => o,
        Err(e) => {
            report::write_trace(&opts.out.join(TRACE_FILE), &rows)?;
            close_session(&hub, &sid)?;
            return Err(sim_err(e));
        }
    };
    let info = close_session(&hub, &sid)?;
    let report = RunReport {
        summary: outcome.summary.clone(),
        hub: info,
    };
    report::write_trace(&opts.out.join(TRACE_FILE), &outcome.rows)?;
    report::write_json(&opts.out.join(SUMMARY_FILE), &report)?;
    if opts.emit_plots {
        plot::humidity_trace(&opts.out.join(HUMIDITY_SVG), &outcome.rows)?;
        plot::fit_factor_trace(&opts.out.join(FIT_FACTOR_SVG), &outcome.rows)?;
    }
    Ok(report)
}

pub fn trace_file(autofit: bool) -> String {
    format!("trace_autofit_{}.csv", if autofit { "on" } else { "off" })
}

pub fn summary_file(autofit: bool) -> String {
    format!("summary_autofit_{}.json", if autofit { "on" } else { "off" })
}

/// Run the exercises with the controller on and off, both through the hub.
pub fn fit_test(sc: Scenario, opts: &OutputOptions) -> Result<(FitTestReport, RunOutcome, RunOutcome), CliError> {
    prepare_out(&opts.out)?;
    let hub = fresh_hub(&opts.out)?;
    let base = device_id(&sc);
    // Opened here, in a fixed order, so session ids do not depend on thread timing.
    let on = HubLink::open(hub.clone(), &format!("{base}-autofit-on")).context("opening hub session")?;
    let off = HubLink::open(hub.clone(), &format!("{base}-autofit-off")).context("opening hub session")?;
    let ids = [on.session_id().to_string(), off.session_id().to_string()];
    let slots = [Mutex::new(Some(on)), Mutex::new(Some(off))];
    let result = fit_test_with(&sc, |autofit| {
        slots[usize::from(!autofit)]
            .lock()
            .expect("link slot poisoned")
            .take()
            .ok_or_else(|| SimError::Link("hub link already in use".into()))
    });
    let mut sessions = Vec::with_capacity(ids.len());
    for id in &ids {
        sessions.push(close_session(&hub, id)?);
    }
    let (table, run_on, run_off) = result.map_err(sim_err)?;
    let report = FitTestReport {
        table,
        hub_sessions: sessions,
    };
    report::write_json(&opts.out.join(FIT_TEST_JSON), &report)?;
    report::write_fit_table(&opts.out.join(FIT_TEST_CSV), &report.table)?;
    for (autofit, run) in [(true, &run_on), (false, &run_off)] {
        report::write_trace(&opts.out.join(trace_file(autofit)), &run.rows)?;
        report::write_json(&opts.out.join(summary_file(autofit)), &run.summary)?;
    }
    if opts.emit_plots {
        plot::fit_factor_bars(&opts.out.join(FIT_FACTOR_SVG), &report.table)?;
        plot::humidity_trace(&opts.out.join(HUMIDITY_SVG), &run_on.rows)?;
    }
    Ok((report, run_on, run_off))
}

/// Anchor points from a CSV file with columns `voltage,power,temp_c`.
pub fn read_anchors(path: &Path) -> anyhow::Result<Vec<HeaterAnchor>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut anchors = Vec::new();
    for (i, rec) in rd.deserialize().enumerate() {
        anchors.push(rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?);
    }
    Ok(anchors)
}

/// Fit the heater and write `heater_fit.json`.
pub fn fit_heater(anchors: &[HeaterAnchor], ambient_c: f64, out: &Path) -> Result<HeaterFit, CliError> {
    let fit = fit_heater_params(anchors, ambient_c).map_err(anyhow::Error::from)?;
    prepare_out(out)?;
    report::write_json(&out.join(HEATER_FIT_FILE), &fit)?;
    Ok(fit)
}

/// Mean of the trace's fit factor over each exercise, in exercise order.
pub fn trace_exercise_means(rows: &[TraceRow]) -> Vec<(maskloop_core::ActivityKind, f64)> {
    let mut out: Vec<(maskloop_core::ActivityKind, f64, u64)> = Vec::new();
    for r in rows {
        let Some(k) = r.exercise else { continue };
        match out.iter_mut().find(|e| e.0 == k) {
            Some(e) => {
                e.1 += r.ff;
                e.2 += 1;
            }
            None => out.push((k, r.ff, 1)),
        }
    }
    out.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}
