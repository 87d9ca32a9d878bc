//! Report writers. Floats in CSV use the fixed precisions of
//! [`TraceRow::csv_fields`]; JSON is pretty-printed with a trailing newline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use maskloop_core::sim::{FitTestTable, TraceRow};
use serde::Serialize;

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TraceRow::csv_header())?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One row per exercise, then a `mean` row carrying the mean ratio.
pub fn write_fit_table(path: &Path, table: &FitTestTable) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["exercise", "ff_autofit_off", "ff_autofit_on", "ratio"])?;
    for r in &table.rows {
        w.write_record([
            r.exercise.as_str().to_string(),
            format!("{:.4}", r.ff_autofit_off),
            format!("{:.4}", r.ff_autofit_on),
            format!("{:.4}", r.ratio),
        ])?;
    }
    w.write_record(["mean", "", "", &format!("{:.4}", table.mean_ratio)])?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Plain-text rendering of the fit-test table for the terminal.
pub fn fit_table_text(table: &FitTestTable) -> String {
    let mut s = format!("{:<20} {:>10} {:>10} {:>8}\n", "exercise", "FF off", "FF on", "ratio");
    for r in &table.rows {
        s += &format!(
            "{:<20} {:>10.2} {:>10.2} {:>8.3}\n",
            r.exercise.as_str(),
            r.ff_autofit_off,
            r.ff_autofit_on,
            r.ratio
        );
    }
    s += &format!("{:<20} {:>10} {:>10} {:>8.3}\n", "mean", "", "", table.mean_ratio);
    s
}
