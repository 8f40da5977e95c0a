//! Pose recovery from one frame of LED detections.
//!
//! The pipeline follows the projection model in [`crate::geometry`]:
//! pixels are converted to image millimeters about the active rotation
//! center, the LED-to-lens height `H` is recovered from pairwise distance
//! ratios, the azimuth is solved from pairwise image/world difference vectors,
//! and finally every LED yields a plan position by inverting the projection;
//! those are averaged.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::calibration::{CalibrationState, DispersionMode};
use crate::error::{Result, VlpError};
use crate::geometry::{
    estimate_height, normalize_angle, pixel_to_image, plan_block, receiver_z, CameraIntrinsics,
    ImagePoint, PixelPoint, WorldPoint,
};

/// Default tolerance on LED ceiling heights within one frame.
pub const DEFAULT_CEILING_TOLERANCE_MM: f64 = 1.0;

/// Plan vectors shorter than this are treated as zero.
pub const PLAN_EPS_MM: f64 = 1e-9;

pub const ANCHOR_CSV_HEADER: [&str; 4] = ["uid", "x_mm", "y_mm", "z_mm"];
pub const FRAME_CSV_HEADER: [&str; 3] = ["uid", "u", "v"];

/// UID → world coordinate table of the installed luminaires.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTable {
    entries: BTreeMap<String, WorldPoint>,
    pub ceiling_tolerance_mm: f64,
}

impl AnchorTable {
    pub fn new<I, S>(anchors: I, ceiling_tolerance_mm: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, WorldPoint)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (uid, p) in anchors {
            let uid = uid.into();
            if uid.is_empty() {
                return Err(VlpError::InvalidInput("empty anchor uid".into()));
            }
            if !p.is_finite() {
                return Err(VlpError::InvalidInput(format!(
                    "anchor `{uid}` has non-finite coordinates"
                )));
            }
            if entries.insert(uid.clone(), p).is_some() {
                return Err(VlpError::InvalidInput(format!(
                    "duplicate anchor uid `{uid}`"
                )));
            }
        }
        let table = Self {
            entries,
            ceiling_tolerance_mm,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.len() < 2 {
            return Err(VlpError::TooFewAnchors {
                found: self.entries.len(),
            });
        }
        if !(self.ceiling_tolerance_mm >= 0.0) {
            return Err(VlpError::InvalidInput(
                "ceiling tolerance must be >= 0".into(),
            ));
        }
        let items: Vec<_> = self.entries.iter().collect();
        for (i, (ua, pa)) in items.iter().enumerate() {
            for (ub, pb) in &items[i + 1..] {
                if (pa.plan() - pb.plan()).norm() < PLAN_EPS_MM {
                    return Err(VlpError::InvalidInput(format!(
                        "anchors `{ua}` and `{ub}` share the same plan position"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, uid: &str) -> Option<WorldPoint> {
        self.entries.get(uid).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Anchors in uid order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, WorldPoint)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Parses the `uid,x_mm,y_mm,z_mm` text format.
    pub fn from_csv_str(text: &str, source_name: &str, ceiling_tolerance_mm: f64) -> Result<Self> {
        let rows = read_rows(text, source_name, &ANCHOR_CSV_HEADER)?;
        let mut anchors = Vec::with_capacity(rows.len());
        let mut seen = HashSet::new();
        for (line, fields) in rows {
            let uid = fields[0].clone();
            if !seen.insert(uid.clone()) {
                return Err(parse_error(
                    source_name,
                    line,
                    format!("duplicate uid `{uid}`"),
                ));
            }
            let x = parse_f64(&fields[1], "x_mm", source_name, line)?;
            let y = parse_f64(&fields[2], "y_mm", source_name, line)?;
            let z = parse_f64(&fields[3], "z_mm", source_name, line)?;
            anchors.push((uid, WorldPoint::new(x, y, z)));
        }
        Self::new(anchors, ceiling_tolerance_mm)
    }

    pub fn load(path: impl AsRef<Path>, ceiling_tolerance_mm: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VlpError::io(path, e))?;
        Self::from_csv_str(&text, &path.display().to_string(), ceiling_tolerance_mm)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = ANCHOR_CSV_HEADER.join(",");
        out.push('\n');
        for (uid, p) in self.iter() {
            out.push_str(&format!("{uid},{},{},{}\n", p.x, p.y, p.z));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub uid: String,
    pub centroid: PixelPoint,
}

/// One camera observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub detections: Vec<Detection>,
    pub timestamp_s: f64,
}

impl Frame {
    pub fn new(detections: Vec<Detection>, timestamp_s: f64) -> Self {
        Self {
            detections,
            timestamp_s,
        }
    }

    /// Parses the `uid,u,v` text format. The timestamp is set to zero.
    pub fn from_csv_str(text: &str, source_name: &str) -> Result<Self> {
        let rows = read_rows(text, source_name, &FRAME_CSV_HEADER)?;
        let mut seen = HashSet::new();
        let mut detections = Vec::with_capacity(rows.len());
        for (line, fields) in rows {
            let uid = fields[0].clone();
            if !seen.insert(uid.clone()) {
                return Err(parse_error(
                    source_name,
                    line,
                    format!("duplicate uid `{uid}` in frame"),
                ));
            }
            let u = parse_f64(&fields[1], "u", source_name, line)?;
            let v = parse_f64(&fields[2], "v", source_name, line)?;
            detections.push(Detection {
                uid,
                centroid: PixelPoint::new(u, v),
            });
        }
        Ok(Self::new(detections, 0.0))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VlpError::io(path, e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = FRAME_CSV_HEADER.join(",");
        out.push('\n');
        for d in &self.detections {
            out.push_str(&format!("{},{},{}\n", d.uid, d.centroid.u, d.centroid.v));
        }
        out
    }
}

fn parse_error(source_name: &str, line: u64, message: String) -> VlpError {
    VlpError::Parse {
        source_name: source_name.to_string(),
        line: Some(line),
        message,
    }
}

fn parse_f64(field: &str, name: &str, source_name: &str, line: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        parse_error(
            source_name,
            line,
            format!("field `{name}`: `{field}` is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_error(
            source_name,
            line,
            format!("field `{name}` is not finite"),
        ));
    }
    Ok(v)
}

/// Reads a headed CSV, checks the header exactly, returns (line, fields) rows.
fn read_rows(text: &str, source_name: &str, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| parse_error(source_name, 1, e.to_string()))?
        .clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(parse_error(
            source_name,
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

/// Azimuth solution; `(a, b) = (cos γ, sin γ)` after normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawSolution {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    /// Two-LED: `|a² + b² − 1|` before normalization.
    /// N-LED: RMS of the stacked pairwise residual, image millimeters.
    pub residual: f64,
}

impl YawSolution {
    fn from_unnormalized(a: f64, b: f64, residual: impl FnOnce(f64, f64) -> f64) -> Result<Self> {
        let norm = a.hypot(b);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(VlpError::DegenerateGeometry(format!(
                "yaw system has no direction (a = {a}, b = {b})"
            )));
        }
        let (a, b) = (a / norm, b / norm);
        Ok(Self {
            a,
            b,
            gamma: normalize_angle(b.atan2(a)),
            residual: residual(a, b),
        })
    }
}

/// Solves `image_delta = scale · [[a, b], [−b, a]] · world_delta` for `(a, b)`.
///
/// `scale` is `−f / H`.
pub fn solve_yaw_two_led(
    world_delta: Vector2<f64>,
    image_delta: Vector2<f64>,
    scale: f64,
) -> Result<YawSolution> {
    let w2 = world_delta.norm_squared();
    if !(world_delta.norm() >= PLAN_EPS_MM) {
        return Err(VlpError::DegenerateGeometry(
            "LED pair coincides in plan".into(),
        ));
    }
    if !(scale != 0.0 && scale.is_finite()) {
        return Err(VlpError::DegenerateGeometry(format!(
            "invalid projection scale {scale}"
        )));
    }
    let (wx, wy) = (world_delta.x, world_delta.y);
    let (ix, iy) = (image_delta.x, image_delta.y);
    let a = (ix * wx + iy * wy) / (scale * w2);
    let b = (ix * wy - iy * wx) / (scale * w2);
    let pre = a * a + b * b;
    YawSolution::from_unnormalized(a, b, |_, _| (pre - 1.0).abs())
}

/// Least-squares azimuth from every LED pair's difference vectors.
///
/// The stacked system has orthogonal, equal-norm columns, so its normal
/// matrix is a multiple of the identity and the solution is closed form.
pub fn solve_yaw_n_led(
    correspondences: &[(WorldPoint, ImagePoint)],
    scale: f64,
) -> Result<YawSolution> {
    if correspondences.len() < 3 {
        return Err(VlpError::TooFewAnchors {
            found: correspondences.len(),
        });
    }
    if !(scale != 0.0 && scale.is_finite()) {
        return Err(VlpError::DegenerateGeometry(format!(
            "invalid projection scale {scale}"
        )));
    }
    let pairs = pair_deltas(correspondences);
    let (mut num_a, mut num_b, mut w2) = (0.0, 0.0, 0.0);
    for (w, i) in &pairs {
        num_a += i.x * w.x + i.y * w.y;
        num_b += i.x * w.y - i.y * w.x;
        w2 += w.norm_squared();
    }
    if !(w2.sqrt() >= PLAN_EPS_MM) {
        return Err(VlpError::DegenerateGeometry(
            "stacked yaw system is rank deficient".into(),
        ));
    }
    let a = num_a / (scale * w2);
    let b = num_b / (scale * w2);
    YawSolution::from_unnormalized(a, b, |a, b| {
        let m = plan_block(a, b) * scale;
        let sq: f64 = pairs.iter().map(|(w, i)| (m * w - i).norm_squared()).sum();
        (sq / (2 * pairs.len()) as f64).sqrt()
    })
}

fn pair_deltas(c: &[(WorldPoint, ImagePoint)]) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    let mut out = Vec::with_capacity(c.len() * (c.len() - 1) / 2);
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            out.push((
                c[i].0.plan() - c[j].0.plan(),
                c[i].1.to_vector() - c[j].1.to_vector(),
            ));
        }
    }
    out
}

/// Receiver plan position from the inverted projection, averaged over LEDs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanFix {
    pub x: f64,
    pub y: f64,
    /// RMS distance of the per-LED answers from their mean.
    pub residual_mm: f64,
}

pub fn solve_plan_position(
    correspondences: &[(WorldPoint, ImagePoint)],
    yaw: &YawSolution,
    height_mm: f64,
    intr: &CameraIntrinsics,
) -> Result<PlanFix> {
    if correspondences.is_empty() {
        return Err(VlpError::EmptyInput("no correspondences".into()));
    }
    if !(height_mm > 0.0) {
        return Err(VlpError::DegenerateGeometry(format!(
            "non-positive height H = {height_mm}"
        )));
    }
    // inverse of the orthonormal plan block is its transpose
    let inverse: Matrix2<f64> =
        plan_block(yaw.a, yaw.b).transpose() * (height_mm / intr.focal_length_mm);
    let fixes: Vec<Vector2<f64>> = correspondences
        .iter()
        .map(|(w, i)| w.plan() + inverse * i.to_vector())
        .collect();
    let n = fixes.len() as f64;
    let mean = fixes.iter().sum::<Vector2<f64>>() / n;
    let spread = (fixes.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    Ok(PlanFix {
        x: mean.x,
        y: mean.y,
        residual_mm: spread,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub position: WorldPoint,
    pub yaw: f64,
    pub height_h: f64,
    pub n_leds_used: usize,
    pub plan_residual_mm: f64,
    /// Spread (max − min) of the pairwise height estimates.
    pub height_spread_mm: f64,
    pub yaw_residual: f64,
}

/// Full single-frame pipeline with the given calibration applied.
pub fn solve_pose(
    frame: &Frame,
    anchors: &AnchorTable,
    intr: &CameraIntrinsics,
    calib: &CalibrationState,
) -> Result<PoseEstimate> {
    let mut seen = HashSet::new();
    let mut correspondences = Vec::with_capacity(frame.detections.len());
    for d in &frame.detections {
        if !seen.insert(d.uid.as_str()) {
            return Err(VlpError::InvalidInput(format!(
                "duplicate uid `{}` in frame",
                d.uid
            )));
        }
        let world = anchors
            .get(&d.uid)
            .ok_or_else(|| VlpError::UnknownUid(d.uid.clone()))?;
        let image = pixel_to_image(d.centroid, intr, calib.rotation_center)?;
        correspondences.push((world, image));
    }
    let n = correspondences.len();
    if n < 2 {
        return Err(VlpError::TooFewAnchors { found: n });
    }

    let mut heights = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            heights.push(estimate_height(
                (correspondences[i].0, correspondences[j].0),
                (correspondences[i].1, correspondences[j].1),
                intr,
            )?);
        }
    }
    let height = heights.iter().sum::<f64>() / heights.len() as f64;
    let height_spread = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - heights.iter().cloned().fold(f64::INFINITY, f64::min);

    let led_z: Vec<f64> = correspondences.iter().map(|(w, _)| w.z).collect();
    let z = receiver_z(&led_z, height, anchors.ceiling_tolerance_mm)?;

    let scale = -intr.focal_length_mm / height;
    let yaw = if n == 2 {
        let (w0, i0) = correspondences[0];
        let (w1, i1) = correspondences[1];
        solve_yaw_two_led(
            w0.plan() - w1.plan(),
            i0.to_vector() - i1.to_vector(),
            scale,
        )?
    } else {
        solve_yaw_n_led(&correspondences, scale)?
    };

    let fix = solve_plan_position(&correspondences, &yaw, height, intr)?;
    let (mut x, mut y) = (fix.x, fix.y);
    if calib.dispersion_mode == DispersionMode::WorldPlane {
        x -= calib.dispersion_offset[0];
        y -= calib.dispersion_offset[1];
    }

    let estimate = PoseEstimate {
        position: WorldPoint::new(x, y, z),
        yaw: yaw.gamma,
        height_h: height,
        n_leds_used: n,
        plan_residual_mm: fix.residual_mm,
        height_spread_mm: height_spread,
        yaw_residual: yaw.residual,
    };
    if !estimate.position.is_finite() || !estimate.yaw.is_finite() {
        return Err(VlpError::DegenerateGeometry(
            "pose solution is not finite".into(),
        ));
    }
    Ok(estimate)
}
