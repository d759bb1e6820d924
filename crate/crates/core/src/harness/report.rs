//! Versioned JSON report files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{
    CalibrationReport, CnormOutcome, ExperimentResult, HarnessError, SweepReport,
    TokenizationReport,
};

pub const SCHEMA_PREFIX: &str = "ctxnorm.";
pub(crate) const EXPERIMENT_SCHEMA: &str = "ctxnorm.experiment/1";
pub(crate) const CALIBRATION_SCHEMA: &str = "ctxnorm.calibration/1";
pub(crate) const SWEEP_SCHEMA: &str = "ctxnorm.sweep/1";
pub(crate) const PIPELINE_SCHEMA: &str = "ctxnorm.pipeline/1";
pub(crate) const TOKENIZATION_SCHEMA: &str = "ctxnorm.tokenization/1";

#[derive(Debug, Clone, PartialEq)]
pub enum ReportFile {
    Experiment(ExperimentResult),
    Calibration(CalibrationReport),
    Sweep(SweepReport),
    Pipeline(Box<CnormOutcome>),
    Tokenization(TokenizationReport),
}

fn report_err(path: &Path, reason: impl ToString) -> HarnessError {
    HarnessError::Report {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Write `value` as pretty JSON with a trailing newline. Refuses to
/// overwrite an existing file unless `force` is set.
pub fn write_report<T: Serialize>(path: impl AsRef<Path>, value: &T, force: bool) -> Result<(), HarnessError> {
    let path = path.as_ref();
    if path.exists() && !force {
        return Err(report_err(path, "file exists (use --force to overwrite)"));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| report_err(path, e))?;
    }
    let mut body = serde_json::to_string_pretty(value).map_err(|e| report_err(path, e))?;
    body.push('\n');
    let mut file = fs::File::create(path).map_err(|e| report_err(path, e))?;
    file.write_all(body.as_bytes()).map_err(|e| report_err(path, e))
}

/// Read any report file, dispatching on its `schema` tag.
pub fn read_report(path: impl AsRef<Path>) -> Result<ReportFile, HarnessError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| report_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| report_err(path, e))?;
    let schema = value
        .get("schema")
        .and_then(|s| s.as_str())
        .ok_or_else(|| report_err(path, "missing schema tag"))?
        .to_owned();
    let parse = |e: serde_json::Error| report_err(path, e);
    Ok(match schema.as_str() {
        EXPERIMENT_SCHEMA => ReportFile::Experiment(serde_json::from_value(value).map_err(parse)?),
        CALIBRATION_SCHEMA => ReportFile::Calibration(serde_json::from_value(value).map_err(parse)?),
        SWEEP_SCHEMA => ReportFile::Sweep(serde_json::from_value(value).map_err(parse)?),
        PIPELINE_SCHEMA => ReportFile::Pipeline(Box::new(serde_json::from_value(value).map_err(parse)?)),
        TOKENIZATION_SCHEMA => ReportFile::Tokenization(serde_json::from_value(value).map_err(parse)?),
        other => return Err(report_err(path, format!("unknown schema {other:?}"))),
    })
}
