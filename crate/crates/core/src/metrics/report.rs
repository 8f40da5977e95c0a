//! Report files: per-trial CSV, CDF CSV and a TOML summary.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! re-parsing a CSV reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{point_segment_distance, ErrorSummary, FittedLine};
use crate::error::{Result, VlpError};
use crate::simulator::TrialRecord;

pub const TRIALS_CSV_HEADER: &str =
    "trial,true_x,true_y,true_z,true_yaw,est_x,est_y,est_z,est_yaw,err_mm,status";
pub const CDF_CSV_HEADER: &str = "error_mm,fraction";
const TRAJECTORY_CSV_HEADER: &str =
    "t_s,true_x,true_y,est_x,est_y,command_dist_mm,actual_dist_mm,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Everything [`emit_report`] writes.
pub struct Report<'a> {
    pub records: &'a [TrialRecord],
    /// Value of the `err_mm` column per record, `None` for failed trials.
    pub errors: &'a [Option<f64>],
    pub summary: &'a ErrorSummary,
    pub provenance: ReportProvenance,
    pub fitted_line: Option<FittedLine>,
    /// Command segment of a dynamic run; adds `trajectory.csv`.
    pub command_line: Option<(Vector2<f64>, Vector2<f64>)>,
    pub extra: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    experiment: &'a str,
    seed: u64,
    config_hash: &'a str,
    errors: SummaryErrors,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<SummaryLine>,
    #[serde(skip_serializing_if = "toml::Table::is_empty")]
    extra: toml::Table,
}

#[derive(Serialize)]
struct SummaryErrors {
    n: usize,
    n_failed: usize,
    mean_mm: f64,
    rms_mm: f64,
    max_mm: f64,
    p50_mm: f64,
    p90_mm: f64,
}

#[derive(Serialize)]
struct SummaryLine {
    point_x_mm: f64,
    point_y_mm: f64,
    direction_x: f64,
    direction_y: f64,
    rms_residual_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    angle_to_command_deg: Option<f64>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| VlpError::io(path, e))
}

/// Writes `trials.csv`, `cdf.csv`, `summary.toml` (and `trajectory.csv` for
/// dynamic runs) into `dir`, creating it if needed.
pub fn emit_report(dir: impl AsRef<Path>, report: &Report<'_>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if report.records.is_empty() {
        return Err(VlpError::EmptyInput("no trial records to report".into()));
    }
    if report.errors.len() != report.records.len() {
        return Err(VlpError::InvalidInput(
            "one error value per record is required".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| VlpError::io(dir, e))?;

    let mut written = Vec::new();
    let trials = dir.join("trials.csv");
    write_file(&trials, &trials_csv(report.records, report.errors))?;
    written.push(trials);

    let cdf = dir.join("cdf.csv");
    let mut text = format!("{CDF_CSV_HEADER}\n");
    for (e, f) in &report.summary.cdf {
        let _ = writeln!(text, "{e},{f}");
    }
    write_file(&cdf, &text)?;
    written.push(cdf);

    if let Some((start, end)) = report.command_line {
        let path = dir.join("trajectory.csv");
        write_file(&path, &trajectory_csv(report.records, start, end))?;
        written.push(path);
    }

    let summary = dir.join("summary.toml");
    write_file(&summary, &summary_toml(report)?)?;
    written.push(summary);
    Ok(written)
}

fn trials_csv(records: &[TrialRecord], errors: &[Option<f64>]) -> String {
    let mut out = format!("{TRIALS_CSV_HEADER}\n");
    for (r, err) in records.iter().zip(errors) {
        let t = &r.true_pose;
        let _ = write!(
            out,
            "{},{},{},{},{},",
            r.index, t.position.x, t.position.y, t.position.z, t.yaw_gamma
        );
        match (&r.estimate, err) {
            (Ok(e), Some(err)) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},ok",
                    e.position.x, e.position.y, e.position.z, e.yaw, err
                );
            }
            (Ok(e), None) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},,ok",
                    e.position.x, e.position.y, e.position.z, e.yaw
                );
            }
            (Err(e), _) => {
                let _ = writeln!(out, ",,,,,{}", e.kind());
            }
        }
    }
    out
}

fn trajectory_csv(records: &[TrialRecord], start: Vector2<f64>, end: Vector2<f64>) -> String {
    // the "actual" line joins the first and last true positions
    let actual_a = records
        .first()
        .map(|r| r.true_pose.position.plan())
        .unwrap_or(start);
    let actual_b = records
        .last()
        .map(|r| r.true_pose.position.plan())
        .unwrap_or(end);
    let mut out = format!("{TRAJECTORY_CSV_HEADER}\n");
    for r in records {
        let t = r.true_pose.position;
        let _ = write!(out, "{},{},{},", r.frame.timestamp_s, t.x, t.y);
        match &r.estimate {
            Ok(e) => {
                let p = e.position.plan();
                let _ = writeln!(
                    out,
                    "{},{},{},{},ok",
                    p.x,
                    p.y,
                    point_segment_distance(p, start, end),
                    point_segment_distance(p, actual_a, actual_b)
                );
            }
            Err(e) => {
                let _ = writeln!(out, ",,,,{}", e.kind());
            }
        }
    }
    out
}

fn summary_toml(report: &Report<'_>) -> Result<String> {
    let s = report.summary;
    let line = report.fitted_line.map(|l| SummaryLine {
        point_x_mm: l.point.x,
        point_y_mm: l.point.y,
        direction_x: l.direction.x,
        direction_y: l.direction.y,
        rms_residual_mm: l.rms_residual_mm,
        angle_to_command_deg: report
            .command_line
            .map(|(a, b)| l.angle_to(b - a).to_degrees()),
    });
    let extra = report
        .extra
        .iter()
        .map(|(k, v)| (k.clone(), toml::Value::Float(*v)))
        .collect();
    let file = SummaryFile {
        experiment: &report.provenance.experiment,
        seed: report.provenance.seed,
        config_hash: &report.provenance.config_hash,
        errors: SummaryErrors {
            n: s.n,
            n_failed: s.n_failed,
            mean_mm: s.mean_mm,
            rms_mm: s.rms_mm,
            max_mm: s.max_mm,
            p50_mm: s.p50_mm,
            p90_mm: s.p90_mm,
        },
        line,
        extra,
    };
    toml::to_string(&file)
        .map_err(|e| VlpError::InvalidInput(format!("cannot serialize summary: {e}")))
}

/// One parsed row of `trials.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub true_pose: [f64; 4],
    pub estimate: Option<[f64; 4]>,
    pub err_mm: Option<f64>,
    pub status: String,
}

pub fn read_trials_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRow>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| VlpError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRIALS_CSV_HEADER => {}
        _ => {
            return Err(VlpError::Parse {
                source_name: name,
                line: Some(1),
                message: format!("expected header `{TRIALS_CSV_HEADER}`"),
            })
        }
    }
    let parse_err = |line: usize, message: String| VlpError::Parse {
        source_name: name.clone(),
        line: Some(line as u64 + 1),
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(parse_err(
                i,
                format!("expected 11 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| parse_err(i, format!("`{s}` is not a number")))
            }
        };
        let need = |s: &str| num(s)?.ok_or_else(|| parse_err(i, "missing value".into()));
        let trial = f[0]
            .parse()
            .map_err(|_| parse_err(i, format!("bad trial index `{}`", f[0])))?;
        let true_pose = [need(f[1])?, need(f[2])?, need(f[3])?, need(f[4])?];
        let estimate = match (num(f[5])?, num(f[6])?, num(f[7])?, num(f[8])?) {
            (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d]),
            _ => None,
        };
        rows.push(TrialRow {
            trial,
            true_pose,
            estimate,
            err_mm: num(f[9])?,
            status: f[10].to_string(),
        });
    }
    Ok(rows)
}
