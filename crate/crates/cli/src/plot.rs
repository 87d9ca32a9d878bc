//! Static SVG charts of a run: fit factor per exercise and the in-mask
//! humidity trace.

use std::path::Path;

use anyhow::anyhow;
use maskloop_core::sim::{FitTestTable, TraceRow};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 480);
const OFF: RGBColor = RGBColor(0x8a, 0x8a, 0x8a);
const ON: RGBColor = RGBColor(0x2e, 0x8b, 0x57);
const LIG: RGBColor = RGBColor(0xc0, 0x60, 0x20);

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plot: {e:?}")
}

/// Grouped bars of mean fit factor, controller off and on.
pub fn fit_factor_bars(path: &Path, table: &FitTestTable) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let n = table.rows.len();
    let top = table
        .rows
        .iter()
        .flat_map(|r| [r.ff_autofit_off, r.ff_autofit_on])
        .filter(|v| v.is_finite())
        .fold(1.0_f64, f64::max)
        * 1.15;
    let names: Vec<&str> = table.rows.iter().map(|r| r.exercise.as_str()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("Fit factor by exercise", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..n as f64, 0.0..top)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 && i < names.len() {
                names[i].to_string()
            } else {
                String::new()
            }
        })
        .y_desc("fit factor")
        .draw()
        .map_err(draw_err)?;
    for (label, color, lo, hi, pick) in [
        ("auto-fit off", OFF, 0.12, 0.48, 0usize),
        ("auto-fit on", ON, 0.52, 0.88, 1usize),
    ] {
        chart
            .draw_series(table.rows.iter().enumerate().map(|(i, r)| {
                let v = if pick == 0 { r.ff_autofit_off } else { r.ff_autofit_on };
                Rectangle::new([(i as f64 + lo, 0.0), (i as f64 + hi, v)], color.filled())
            }))
            .map_err(draw_err)?
            .label(label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// In-mask RH and the humidity element's ΔR/R₀ against time in minutes.
pub fn humidity_trace(path: &Path, rows: &[TraceRow]) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let t_end = rows.last().map_or(1.0, |r| r.t_s / 60.0).max(1.0);
    let top = rows.iter().map(|r| r.lig_change.max(r.rh_in)).fold(1.0_f64, f64::max) * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption("In-mask humidity", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..t_end, 0.0..top)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("time (min)")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.t_s / 60.0, r.rh_in)), BLUE.stroke_width(2)))
        .map_err(draw_err)?
        .label("RH in mask")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.t_s / 60.0, r.lig_change)), LIG.stroke_width(2)))
        .map_err(draw_err)?
        .label("sensor dR/R0")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], LIG));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Per-tick fit factor against time in seconds.
pub fn fit_factor_trace(path: &Path, rows: &[TraceRow]) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let t_end = rows.last().map_or(1.0, |r| r.t_s).max(1.0);
    let top = rows.iter().map(|r| r.ff).filter(|v| v.is_finite()).fold(1.0_f64, f64::max) * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption("Fit factor", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..t_end, 0.0..top)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("time (s)")
        .y_desc("fit factor")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.t_s, r.ff)), ON.stroke_width(2)))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
