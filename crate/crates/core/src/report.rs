//! Report emission: sweep rows as CSV or JSON, byte-stable.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::sweep::SweepRow;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to encode report: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("cannot infer report format from path {0:?}; use .csv or .json")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self, ReportError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv),
            Some("json") => Ok(Self::Json),
            _ => Err(ReportError::UnknownFormat(path.display().to_string())),
        }
    }
}

pub const CSV_HEADER: &str = "config,budget,frames,total_tokens,utility,reduction_pct,cost_units,status";

/// CSV with a fixed column set and fixed float formatting, so identical rows
/// always produce identical bytes.
pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        debug_assert!(
            !r.config.contains(',') && !r.config.contains('\n'),
            "config labels must not contain CSV separators"
        );
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.1},{},{}\n",
            r.config,
            r.budget,
            r.frames,
            r.total_tokens,
            r.utility,
            r.reduction_pct,
            r.cost_units,
            r.status
        ));
    }
    out
}

/// The row list verbatim.
pub fn render_json(rows: &[SweepRow]) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_report(rows: &[SweepRow], format: ReportFormat, path: &Path) -> Result<(), ReportError> {
    let body = match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Json => render_json(rows)?,
    };
    fs::write(path, body)?;
    Ok(())
}
