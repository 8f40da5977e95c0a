//! Positioning error statistics and trajectory fits.

mod report;

use nalgebra::Vector2;

pub use report::{
    emit_report, read_trials_csv, Report, ReportProvenance, TrialRow, CDF_CSV_HEADER,
    TRIALS_CSV_HEADER,
};

use crate::error::{Result, VlpError};
use crate::simulator::TrialRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    /// Successful trials the statistics cover.
    pub n: usize,
    pub n_failed: usize,
    pub mean_mm: f64,
    pub rms_mm: f64,
    pub max_mm: f64,
    pub p50_mm: f64,
    pub p90_mm: f64,
    /// `(error_mm, cumulative_fraction)`, one entry per distinct error value.
    pub cdf: Vec<(f64, f64)>,
}

impl ErrorSummary {
    /// Fraction of errors at or below `error_mm`.
    pub fn cdf_at(&self, error_mm: f64) -> f64 {
        match self.cdf.partition_point(|(e, _)| *e <= error_mm) {
            0 => 0.0,
            k => self.cdf[k - 1].1,
        }
    }
}

/// Nearest-rank percentile of sorted data, `p` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Summary of a list of per-trial errors; `None` entries count as failures.
pub fn summarize(errors: &[Option<f64>]) -> Result<ErrorSummary> {
    let mut sorted: Vec<f64> = errors.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Err(VlpError::EmptyInput(
            "no successful trials to summarize".into(),
        ));
    }
    if sorted.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(VlpError::InvalidInput(
            "errors must be finite and non-negative".into(),
        ));
    }
    // sums run over sorted values so the result does not depend on input order
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mean = sorted.iter().sum::<f64>() / nf;
    let rms = (sorted.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (k, &e) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / nf;
        match cdf.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => cdf.push((e, frac)),
        }
    }
    Ok(ErrorSummary {
        n,
        n_failed: errors.len() - n,
        mean_mm: mean,
        rms_mm: rms,
        max_mm: sorted[n - 1],
        p50_mm: nearest_rank(&sorted, 50.0),
        p90_mm: nearest_rank(&sorted, 90.0),
        cdf,
    })
}

/// Per-record Euclidean error against the true pose (plan or full 3-D).
pub fn record_errors(records: &[TrialRecord], plan_only: bool) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            r.estimate.as_ref().ok().map(|e| {
                if plan_only {
                    (e.position.plan() - r.true_pose.position.plan()).norm()
                } else {
                    (e.position.to_vector() - r.true_pose.position.to_vector()).norm()
                }
            })
        })
        .collect()
}

pub fn error_stats(records: &[TrialRecord], plan_only: bool) -> Result<ErrorSummary> {
    summarize(&record_errors(records, plan_only))
}

/// Total-least-squares line through plan points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedLine {
    pub point: Vector2<f64>,
    /// Unit direction, oriented with a non-negative x component.
    pub direction: Vector2<f64>,
    /// RMS perpendicular distance of the points from the line.
    pub rms_residual_mm: f64,
}

impl FittedLine {
    pub fn distance(&self, p: Vector2<f64>) -> f64 {
        let d = p - self.point;
        (d.x * self.direction.y - d.y * self.direction.x).abs()
    }

    /// Angle between this line and direction `other`, in `[0, π/2]`.
    pub fn angle_to(&self, other: Vector2<f64>) -> f64 {
        let other = other.normalize();
        let c = self.direction.dot(&other).abs().min(1.0);
        let s = (self.direction.x * other.y - self.direction.y * other.x).abs();
        s.atan2(c)
    }
}

/// Principal direction of the centered point set.
pub fn fit_line(points: &[Vector2<f64>]) -> Result<FittedLine> {
    if points.len() < 2 {
        return Err(VlpError::InvalidInput(format!(
            "line fit needs 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector2<f64>>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let spread = sxx + syy;
    let magnitude = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    if !(spread > 1e-24 * magnitude.max(1.0)) {
        return Err(VlpError::DegenerateGeometry(
            "line fit points coincide".into(),
        ));
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut direction = Vector2::new(theta.cos(), theta.sin());
    if direction.x < 0.0 || (direction.x == 0.0 && direction.y < 0.0) {
        direction = -direction;
    }
    let mut line = FittedLine {
        point: mean,
        direction,
        rms_residual_mm: 0.0,
    };
    line.rms_residual_mm = (points
        .iter()
        .map(|p| line.distance(*p).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(line)
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let ap = p - a;
    let t = ap.dot(&ab) / len2;
    if t <= 0.0 {
        ap.norm()
    } else if t >= 1.0 {
        (p - b).norm()
    } else {
        (ab.x * ap.y - ab.y * ap.x).abs() / len2.sqrt()
    }
}

/// Per-record distance from the estimate to the command segment.
pub fn command_line_errors(
    records: &[TrialRecord],
    start: Vector2<f64>,
    end: Vector2<f64>,
) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            r.estimate
                .as_ref()
                .ok()
                .map(|e| point_segment_distance(e.position.plan(), start, end))
        })
        .collect()
}

/// Error summary of a dynamic run against its command segment.
pub fn dynamic_errors(
    records: &[TrialRecord],
    start: Vector2<f64>,
    end: Vector2<f64>,
) -> Result<ErrorSummary> {
    if !((end - start).norm() > 0.0) {
        return Err(VlpError::DegenerateGeometry(
            "command line start and end coincide".into(),
        ));
    }
    summarize(&command_line_errors(records, start, end))
}
