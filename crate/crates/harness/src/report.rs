//! JSON and CSV report files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(HarnessError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl TryFrom<String> for ReportFormat {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ReportFormat> for String {
    fn from(f: ReportFormat) -> Self {
        f.to_string()
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

/// A report serializes losslessly to JSON and flattens to one CSV table.
pub trait Report: Serialize + DeserializeOwned {
    type Row: Serialize;
    /// File name without extension.
    const STEM: &'static str;
    fn csv_rows(&self) -> Vec<Self::Row>;
}

pub fn to_json(report: &impl Report) -> Result<String, HarnessError> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv<R: Report>(report: &R) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in report.csv_rows() {
        w.serialize(row).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn from_json<R: Report>(s: &str) -> Result<R, HarnessError> {
    serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Writes `<dir>/<stem>.<format>` and returns its path.
pub fn emit_report<R: Report>(report: &R, format: ReportFormat, dir: &Path) -> Result<PathBuf, HarnessError> {
    let body = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Csv => to_csv(report)?,
    };
    let path = dir.join(format!("{}.{format}", R::STEM));
    std::fs::write(&path, body).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
