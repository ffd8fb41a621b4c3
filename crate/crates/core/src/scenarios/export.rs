//! Per-step trajectories and summary metrics as CSV or JSON lines.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MetricsReport, RunReport};
use crate::error::{Error, Result};
use crate::telemetry::TelemetryFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json" => Ok(Self::Jsonl),
            other => Err(Error::invalid("format", format!("unknown export format {other:?}"))),
        }
    }
}

impl ExportFormat {
    /// Guesses the format from a file extension, defaulting to JSON lines.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: MetricsReport,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::invalid("export", e.to_string())
}

/// Writes one row (or line) per step followed by the summary metrics.
///
/// CSV rows carry `step, lambda_i, P_i, mi_i, w_i, p_total, sum_mi,
/// weighted_obj, event` with events joined by `;`; the summary follows as
/// `# key=value` comment lines. JSON lines end with a `{"summary": ...}` line.
pub fn export_report<W: Write>(report: &RunReport, format: ExportFormat, out: W) -> Result<()> {
    match format {
        ExportFormat::Csv => write_csv(report, out),
        ExportFormat::Jsonl => write_jsonl(report, out),
    }
}

fn write_csv<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    let n = report.channels;
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut out);
        let mut header = vec!["step".to_string()];
        for prefix in ["lambda", "P", "mi", "w"] {
            header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["p_total", "sum_mi", "weighted_obj", "event"].map(String::from));
        w.write_record(&header).map_err(io_err)?;
        for f in &report.frames {
            let mut row = vec![f.step.to_string()];
            for v in [&f.lambda, &f.powers, &f.mi, &f.weights] {
                if v.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: v.len() });
                }
                row.extend(v.iter().map(f64::to_string));
            }
            row.push(f.p_total.to_string());
            row.push(f.sum_mi.to_string());
            row.push(f.weighted_objective.to_string());
            row.push(f.events.join(";"));
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    if !report.frames.is_empty() {
        let m = &report.metrics;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        let lines = [
            format!("label={}", m.label),
            format!("steps={}", m.steps),
            format!("mean_sum_mi={}", m.mean_sum_mi),
            format!("final_spread={}", m.final_spread),
            format!("final_mi={}", join(&m.final_mi)),
            format!("final_weights={}", join(&m.final_weights)),
            format!("final_p_total={}", m.final_p_total),
            format!("constraint_violations={}", m.constraint_violations),
        ];
        for l in lines {
            writeln!(out, "# {l}").map_err(io_err)?;
        }
    }
    Ok(())
}

fn write_jsonl<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    for f in &report.frames {
        serde_json::to_writer(&mut out, f).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    serde_json::to_writer(
        &mut out,
        &SummaryLine {
            summary: report.metrics.clone(),
        },
    )
    .map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)
}

/// Reads frames and the optional trailing summary back from JSON lines.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<(Vec<TelemetryFrame>, Option<MetricsReport>)> {
    let mut frames = Vec::new();
    let mut summary = None;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::invalid("jsonl", format!("line {}: {e}", i + 1)))?;
        if value.get("summary").is_some() {
            let s: SummaryLine =
                serde_json::from_value(value).map_err(|e| Error::invalid("jsonl", format!("line {}: {e}", i + 1)))?;
            summary = Some(s.summary);
        } else {
            frames.push(
                serde_json::from_value(value).map_err(|e| Error::invalid("jsonl", format!("line {}: {e}", i + 1)))?,
            );
        }
    }
    Ok((frames, summary))
}
