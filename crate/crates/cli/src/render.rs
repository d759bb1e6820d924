//! Plain-text tables for reports.

use std::fmt::Write;

use ctxnorm_core::harness::{
    CalibrationReport, CnormOutcome, ExperimentResult, ReportFile, SweepReport, TokenizationReport,
};

pub fn experiment(r: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "format {}  ratio {}  backend {}  dataset {}",
        r.config.format.delimiter, r.config.format.ratio, r.config.backend_id, r.config.dataset
    );
    let _ = writeln!(out, "{:>8}  {:>8}", "position", "accuracy");
    for (p, acc) in r.position_accuracy.positions.iter().zip(&r.position_accuracy.per_position) {
        let _ = writeln!(out, "{p:>8}  {acc:>8.4}");
    }
    let _ = writeln!(out, "OAA {:.4}  OPA {:.4}", r.summary.oaa, r.summary.opa);
    if r.per_seed.len() > 1 {
        for s in &r.per_seed {
            let _ = writeln!(out, "  seed {:<6} OAA {:.4}  OPA {:.4}", s.seed, s.summary.oaa, s.summary.opa);
        }
    }
    if r.failures > 0 {
        let _ = writeln!(out, "{} backend failures scored as incorrect", r.failures);
    }
    out
}

pub fn calibration(r: &CalibrationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "calibration on {} prompts ({}), backend {}", r.sample_count, r.mode, r.backend_id);
    let _ = writeln!(out, "{:>9}  {:>8}", "delimiter", "mean ABS");
    for c in &r.candidates {
        let mark = if c.format == r.selected { "  <- selected" } else { "" };
        let _ = writeln!(out, "{:>9}  {:>8.4}{mark}", c.format.delimiter.to_string(), c.mean_abs);
    }
    out
}

pub fn sweep(r: &SweepReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>3}  {:>9}", "S", "selected");
    for e in &r.entries {
        let _ = writeln!(out, "{:>3}  {:>9}", e.sample_count, e.selected.to_string());
    }
    let _ = writeln!(out, "stable: {}", r.stable);
    out
}

pub fn tokenization(r: &TokenizationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>9}  {:>10}  {:>6}  {:>6}", "delimiter", "tokens", "OAA", "OPA");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{:>9}  {:>10.1}  {:>6.4}  {:>6.4}",
            row.delimiter.to_string(),
            row.mean_token_count,
            row.oaa,
            row.opa
        );
    }
    let _ = writeln!(out, "pearson r (tokens vs OAA) = {:.4}", r.pearson_r);
    out
}

/// Per-position comparison of two runs over the same positions.
pub fn delta(baseline: &ExperimentResult, treated: &ExperimentResult) -> Result<String, String> {
    let (a, b) = (&baseline.position_accuracy, &treated.position_accuracy);
    if a.positions != b.positions {
        return Err("the two runs cover different positions".into());
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8}  {:>10}  {:>10}  {:>8}",
        "position",
        format!("[{}]", baseline.config.format.delimiter),
        format!("[{}]", treated.config.format.delimiter),
        "delta"
    );
    for ((p, x), y) in a.positions.iter().zip(&a.per_position).zip(&b.per_position) {
        let _ = writeln!(out, "{p:>8}  {x:>10.4}  {y:>10.4}  {:>+8.4}", y - x);
    }
    for (name, x, y) in [
        ("OAA", baseline.summary.oaa, treated.summary.oaa),
        ("OPA", baseline.summary.opa, treated.summary.opa),
    ] {
        let _ = writeln!(out, "{name:>8}  {x:>10.4}  {y:>10.4}  {:>+8.4}", y - x);
    }
    Ok(out)
}

pub fn pipeline(r: &CnormOutcome) -> String {
    let mut out = calibration(&r.calibration);
    out.push('\n');
    out.push_str(&delta(&r.baseline, &r.result).unwrap_or_default());
    out
}

pub fn any(report: &ReportFile) -> String {
    match report {
        ReportFile::Experiment(r) => experiment(r),
        ReportFile::Calibration(r) => calibration(r),
        ReportFile::Sweep(r) => sweep(r),
        ReportFile::Pipeline(r) => pipeline(r),
        ReportFile::Tokenization(r) => tokenization(r),
    }
}
