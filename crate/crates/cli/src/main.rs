use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use maskloop_cli::{report, CliError, OutputOptions, Overrides};
use maskloop_core::fitting::PUBLISHED_ANCHORS;
use maskloop_hub::{Clock, Hub, HubConfig};

#[derive(Parser)]
#[command(name = "maskloop", version, about = "Smart respirator digital twin")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario through the full loop and write its trace and summary.
    Run(RunArgs),
    /// Run the four exercises with auto-fit on and off and compare fit factors.
    FitTest(FitTestArgs),
    /// Fit heater element and thermal resistance to (V, P, T) anchor points.
    FitHeater(FitHeaterArgs),
    /// Serve the telemetry hub over HTTP and websockets.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Replace the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ticks allowed from donning to an all-green fit.
    #[arg(long = "ticks")]
    tick_budget: Option<u32>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write SVG charts.
    #[arg(long)]
    emit_plots: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Leave the strap motors to manual commands only.
    #[arg(long)]
    no_autofit: bool,
}

#[derive(Args)]
struct FitTestArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitHeaterArgs {
    /// CSV with columns voltage,power,temp_c; the published points if omitted.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Ambient temperature, °C.
    #[arg(long, default_value_t = 25.0)]
    ambient: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "MASKLOOP_BIND", default_value = "127.0.0.1:7878")]
    bind: SocketAddr,
    #[arg(long, env = "MASKLOOP_DATA_DIR", default_value = "maskloop-data")]
    data_dir: PathBuf,
    /// Salt for device digests in anonymized exports.
    #[arg(long, env = "MASKLOOP_SALT", default_value = "")]
    salt: String,
    /// Bearer token required on every route but /health.
    #[arg(long, env = "MASKLOOP_TOKEN")]
    token: Option<String>,
    /// Flush buffered rows at least this often, ms.
    #[arg(long, env = "MASKLOOP_FLUSH_MS", default_value_t = 1000)]
    flush_ms: u64,
    /// Rows buffered per session before a write.
    #[arg(long, env = "MASKLOOP_FLUSH_ROWS", default_value_t = 64)]
    flush_rows: usize,
}

impl Common {
    fn load(&self, no_autofit: bool) -> Result<maskloop_core::scenario::Scenario, CliError> {
        let mut sc = maskloop_cli::load_scenario(&self.scenario)?;
        Overrides {
            seed: self.seed,
            tick_budget: self.tick_budget,
            no_autofit,
        }
        .apply(&mut sc);
        Ok(sc)
    }

    fn output(&self) -> OutputOptions {
        OutputOptions {
            out: self.out.clone(),
            emit_plots: self.emit_plots,
        }
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let sc = args.common.load(args.no_autofit)?;
    let rep = maskloop_cli::run_scenario(sc, &args.common.output())?;
    let s = &rep.summary;
    println!(
        "{}: {} ticks ({:.1} s), final mode {}, converged after {}",
        s.scenario,
        s.ticks,
        s.duration_s,
        s.final_mode.as_str(),
        s.converged_after_ticks.map_or("-".to_string(), |t| format!("{t} ticks"))
    );
    for e in &s.exercises {
        println!("  {:<20} mean FF {:>8.2}", e.kind.as_str(), e.ff_mean);
    }
    println!("hub session {}: {} rows", rep.hub.meta.session_id, rep.hub.rows);
    Ok(())
}

fn fit_test(args: FitTestArgs) -> Result<(), CliError> {
    let sc = args.common.load(false)?;
    let (rep, _, _) = maskloop_cli::fit_test(sc, &args.common.output())?;
    print!("{}", report::fit_table_text(&rep.table));
    Ok(())
}

fn fit_heater(args: FitHeaterArgs) -> Result<(), CliError> {
    let anchors = match &args.anchors {
        Some(p) => maskloop_cli::read_anchors(p)?,
        None => PUBLISHED_ANCHORS.to_vec(),
    };
    let fit = maskloop_cli::fit_heater(&anchors, args.ambient, &args.out)?;
    println!(
        "element resistance {:.2} ohm, thermal resistance {:.2} K/W",
        fit.element_resistance, fit.thermal_resistance
    );
    for r in &fit.residuals {
        println!(
            "  {:>5.1} V: P {:>6.1} mW ({:+.1}%), T {:>6.1} C ({:+.1}%)",
            r.anchor.voltage,
            r.predicted_power * 1e3,
            r.power_rel_error * 100.0,
            r.predicted_temp_c,
            r.temp_rel_error * 100.0
        );
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    if args.salt.is_empty() {
        tracing::warn!("no salt set; export digests are plain hashes of device ids");
    }
    if args.token.is_none() {
        tracing::warn!("no token set; every route is open");
    }
    let mut cfg = HubConfig::new(&args.data_dir);
    cfg.salt = args.salt;
    cfg.flush_rows = args.flush_rows.max(1);
    cfg.clock = Clock::System;
    let hub = Arc::new(Hub::open(cfg).context("opening data directory")?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(async move {
        let listener = maskloop_hub::http::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        maskloop_hub::http::serve(listener, hub, args.token, Duration::from_millis(args.flush_ms.max(1)), shutdown)
            .await
            .context("serving")
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::FitTest(a) => fit_test(a),
        Cmd::FitHeater(a) => fit_heater(a),
        Cmd::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
