//! Tabular and JSON outputs for runs and sweeps.

use std::io::{self, Write};

use crate::metrics::{RunMetrics, METRICS_HEADER, TIMING_HEADER};
use crate::model::DetectionReport;

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[RunMetrics]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(mut w: W, rows: &[RunMetrics]) -> io::Result<()> {
    writeln!(w, "{TIMING_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.timing_row())?;
    }
    Ok(())
}

/// JSON array with one object per detection window.
pub fn reports_json(reports: &[DetectionReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}
