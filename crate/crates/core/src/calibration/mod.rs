//! Error calibration.
//!
//! Two procedures refine a [`CalibrationState`]:
//!
//! - **Rotation calibration.** The camera is spun about its lens center at a
//!   fixed spot and one LED's centroid is recorded at roughly a dozen headings.
//!   Those centroids trace a circle around the true rotation center `(u1, v1)`,
//!   which then replaces the nominal principal point `(u0, v0)` when pixels are
//!   converted to image coordinates.
//! - **Dispersion calibration.** The receiver is placed at a known reference
//!   point and positioned repeatedly. The mean of the fixes minus the reference
//!   is the systematic plan shift `(Δx, Δy)`; the radius of the smallest circle
//!   enclosing the fixes is the dispersion radius.
//!
//! The plan shift can be applied two ways ([`DispersionMode`]): subtracted from
//! the solver output in world millimeters (default), or converted into a shift
//! of the pixel center by dividing by the pixel pitch.

mod circle;

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use circle::{
    angular_coverage, fit_circle, fit_circle_with_condition_limit, min_enclosing_circle, Circle2D,
    CircleFit, FIT_CIRCLE_MAX_CONDITION,
};

use crate::error::{Result, VlpError};
use crate::geometry::{CameraIntrinsics, PixelPoint};

/// Sweeps covering less than this angle (radians) raise a warning.
pub const MIN_SWEEP_COVERAGE_RAD: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMode {
    /// Subtract `(Δx, Δy)` from the solved plan position.
    #[default]
    WorldPlane,
    /// Shift the pixel center by `(Δx / di, Δy / dj)`.
    PixelLiteral,
}

/// Fit diagnostics carried with a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CalibrationProvenance {
    pub rotation_samples: usize,
    pub rotation_fit_residual_px: f64,
    pub rotation_fit_radius_px: f64,
    pub rotation_sweep_coverage_deg: f64,
    pub dispersion_samples: usize,
    pub dispersion_reference_mm: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationState {
    /// Nominal principal point `(u0, v0)` this state was derived from.
    pub nominal_center: PixelPoint,
    /// Center used to convert pixels to image coordinates, `(u1, v1)`.
    pub rotation_center: PixelPoint,
    /// Accumulated plan shift `(Δx, Δy)` in millimeters.
    pub dispersion_offset: [f64; 2],
    pub dispersion_radius_mm: f64,
    pub dispersion_mode: DispersionMode,
    pub provenance: CalibrationProvenance,
}

impl CalibrationState {
    /// Uncalibrated state: rotation center at the nominal principal point.
    pub fn nominal(intr: &CameraIntrinsics) -> Self {
        Self {
            nominal_center: intr.principal_point,
            rotation_center: intr.principal_point,
            dispersion_offset: [0.0, 0.0],
            dispersion_radius_mm: 0.0,
            dispersion_mode: DispersionMode::WorldPlane,
            provenance: CalibrationProvenance::default(),
        }
    }

    pub fn with_mode(mut self, mode: DispersionMode) -> Self {
        self.dispersion_mode = mode;
        self
    }

    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<()> {
        if !intr.contains(self.rotation_center) {
            return Err(VlpError::InvalidInput(format!(
                "rotation center ({}, {}) outside the {}x{} sensor",
                self.rotation_center.u,
                self.rotation_center.v,
                intr.resolution_u,
                intr.resolution_v
            )));
        }
        if !(self.dispersion_radius_mm >= 0.0) {
            return Err(VlpError::InvalidInput(
                "dispersion radius must be >= 0".into(),
            ));
        }
        if !self.dispersion_offset.iter().all(|v| v.is_finite()) {
            return Err(VlpError::InvalidInput(
                "dispersion offset is not finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSweepSample {
    pub yaw_index: usize,
    pub centroid: PixelPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationWarning {
    /// The sweep covers less than half a turn around the fitted center.
    InsufficientSweep { coverage_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationCalibration {
    pub state: CalibrationState,
    pub fit: CircleFit,
    pub warning: Option<CalibrationWarning>,
}

/// Fits the rotation center to a yaw sweep of one LED.
///
/// Any previous dispersion calibration is cleared, since it was measured
/// relative to the old rotation center.
pub fn calibrate_rotation_center(
    state: &CalibrationState,
    samples: &[RotationSweepSample],
) -> Result<RotationCalibration> {
    if samples.len() < 3 {
        return Err(VlpError::InvalidInput(format!(
            "rotation calibration needs at least 3 sweep samples, got {}",
            samples.len()
        )));
    }
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            if a.centroid == b.centroid {
                return Err(VlpError::InvalidInput(format!(
                    "sweep samples {} and {} share the centroid ({}, {})",
                    a.yaw_index, b.yaw_index, a.centroid.u, a.centroid.v
                )));
            }
        }
    }
    let points: Vec<Vector2<f64>> = samples
        .iter()
        .map(|s| Vector2::new(s.centroid.u, s.centroid.v))
        .collect();
    let fit = fit_circle(&points)?;
    let coverage = angular_coverage(&points, fit.circle.center);
    let warning =
        (coverage < MIN_SWEEP_COVERAGE_RAD).then_some(CalibrationWarning::InsufficientSweep {
            coverage_deg: coverage.to_degrees(),
        });

    let mut next = *state;
    next.rotation_center = PixelPoint::new(fit.circle.center.x, fit.circle.center.y);
    next.dispersion_offset = [0.0, 0.0];
    next.dispersion_radius_mm = 0.0;
    next.provenance = CalibrationProvenance {
        rotation_samples: samples.len(),
        rotation_fit_residual_px: fit.rms_residual,
        rotation_fit_radius_px: fit.circle.radius,
        rotation_sweep_coverage_deg: coverage.to_degrees(),
        dispersion_samples: 0,
        dispersion_reference_mm: [0.0, 0.0],
    };
    Ok(RotationCalibration {
        state: next,
        fit,
        warning,
    })
}

/// One raw plan fix collected with the receiver at the reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSample {
    pub plan_estimate: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionCalibration {
    pub state: CalibrationState,
    /// Mean of the samples minus the reference, as measured under the input state.
    pub measured_offset: Vector2<f64>,
    pub circle: Circle2D,
}

/// Estimates the systematic plan shift at a known reference point.
///
/// Samples are fixes solved under `state`, so the measured offset is the
/// residual shift left by `state`; it is added to the state's accumulated
/// offset. In [`DispersionMode::PixelLiteral`] the rotation center is moved by
/// the measured offset divided by the pixel pitch as well.
pub fn calibrate_dispersion(
    state: &CalibrationState,
    samples: &[DispersionSample],
    reference: Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Result<DispersionCalibration> {
    if samples.is_empty() {
        return Err(VlpError::EmptyInput(
            "dispersion calibration needs at least 1 sample".into(),
        ));
    }
    let points: Vec<Vector2<f64>> = samples.iter().map(|s| s.plan_estimate).collect();
    let mean = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    let offset = mean - reference;
    let centered: Vec<Vector2<f64>> = points.iter().map(|p| p - mean).collect();
    let mut circle = min_enclosing_circle(&centered)?;
    circle.center += mean;

    let mut next = *state;
    next.dispersion_offset = [
        state.dispersion_offset[0] + offset.x,
        state.dispersion_offset[1] + offset.y,
    ];
    next.dispersion_radius_mm = circle.radius;
    if state.dispersion_mode == DispersionMode::PixelLiteral {
        next.rotation_center = PixelPoint::new(
            state.rotation_center.u + offset.x / intr.pixel_pitch_u_mm,
            state.rotation_center.v + offset.y / intr.pixel_pitch_v_mm,
        );
    }
    next.provenance.dispersion_samples = samples.len();
    next.provenance.dispersion_reference_mm = [reference.x, reference.y];
    Ok(DispersionCalibration {
        state: next,
        measured_offset: offset,
        circle,
    })
}

/// On-disk layout of a calibration file (TOML, one flat table).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    nominal_center_u: f64,
    nominal_center_v: f64,
    rotation_center_u: f64,
    rotation_center_v: f64,
    dispersion_dx_mm: f64,
    dispersion_dy_mm: f64,
    dispersion_radius_mm: f64,
    dispersion_mode: DispersionMode,
    rotation_samples: usize,
    rotation_fit_residual_px: f64,
    rotation_fit_radius_px: f64,
    rotation_sweep_coverage_deg: f64,
    dispersion_samples: usize,
    dispersion_reference_x_mm: f64,
    dispersion_reference_y_mm: f64,
}

impl From<&CalibrationState> for CalibrationFile {
    fn from(s: &CalibrationState) -> Self {
        Self {
            nominal_center_u: s.nominal_center.u,
            nominal_center_v: s.nominal_center.v,
            rotation_center_u: s.rotation_center.u,
            rotation_center_v: s.rotation_center.v,
            dispersion_dx_mm: s.dispersion_offset[0],
            dispersion_dy_mm: s.dispersion_offset[1],
            dispersion_radius_mm: s.dispersion_radius_mm,
            dispersion_mode: s.dispersion_mode,
            rotation_samples: s.provenance.rotation_samples,
            rotation_fit_residual_px: s.provenance.rotation_fit_residual_px,
            rotation_fit_radius_px: s.provenance.rotation_fit_radius_px,
            rotation_sweep_coverage_deg: s.provenance.rotation_sweep_coverage_deg,
            dispersion_samples: s.provenance.dispersion_samples,
            dispersion_reference_x_mm: s.provenance.dispersion_reference_mm[0],
            dispersion_reference_y_mm: s.provenance.dispersion_reference_mm[1],
        }
    }
}

impl From<CalibrationFile> for CalibrationState {
    fn from(f: CalibrationFile) -> Self {
        Self {
            nominal_center: PixelPoint::new(f.nominal_center_u, f.nominal_center_v),
            rotation_center: PixelPoint::new(f.rotation_center_u, f.rotation_center_v),
            dispersion_offset: [f.dispersion_dx_mm, f.dispersion_dy_mm],
            dispersion_radius_mm: f.dispersion_radius_mm,
            dispersion_mode: f.dispersion_mode,
            provenance: CalibrationProvenance {
                rotation_samples: f.rotation_samples,
                rotation_fit_residual_px: f.rotation_fit_residual_px,
                rotation_fit_radius_px: f.rotation_fit_radius_px,
                rotation_sweep_coverage_deg: f.rotation_sweep_coverage_deg,
                dispersion_samples: f.dispersion_samples,
                dispersion_reference_mm: [f.dispersion_reference_x_mm, f.dispersion_reference_y_mm],
            },
        }
    }
}

pub fn calibration_to_string(state: &CalibrationState) -> Result<String> {
    toml::to_string(&CalibrationFile::from(state))
        .map_err(|e| VlpError::InvalidInput(format!("cannot serialize calibration: {e}")))
}

pub fn calibration_from_str(text: &str, source_name: &str) -> Result<CalibrationState> {
    let file: CalibrationFile =
        toml::from_str(text).map_err(|e| toml_error(e, text, source_name))?;
    Ok(file.into())
}

pub fn save_calibration(state: &CalibrationState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, calibration_to_string(state)?).map_err(|e| VlpError::io(path, e))
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CalibrationState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| VlpError::io(path, e))?;
    calibration_from_str(&text, &path.display().to_string())
}

pub(crate) fn toml_error(e: toml::de::Error, text: &str, source_name: &str) -> VlpError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1);
    VlpError::Parse {
        source_name: source_name.to_string(),
        line,
        message: e.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    fn sweep(center: (f64, f64), radius: f64, degrees: &[f64]) -> Vec<RotationSweepSample> {
        degrees
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let a = d.to_radians();
                RotationSweepSample {
                    yaw_index: i,
                    centroid: PixelPoint::new(
                        center.0 + radius * a.cos(),
                        center.1 + radius * a.sin(),
                    ),
                }
            })
            .collect()
    }

    const TWELVE: [f64; 12] = [
        0.0, 28.0, 61.0, 90.0, 122.0, 149.0, 181.0, 212.0, 238.0, 271.0, 300.0, 332.0,
    ];

    #[test]
    fn rotation_center_from_sweep() {
        let out = calibrate_rotation_center(
            &CalibrationState::nominal(&intr()),
            &sweep((405.0, 303.0), 90.0, &TWELVE),
        )
        .unwrap();
        assert_close!(out.state.rotation_center.u, 405.0, 1e-6);
        assert_close!(out.state.rotation_center.v, 303.0, 1e-6);
        assert!(out.warning.is_none());
        assert_eq!(out.state.provenance.rotation_samples, 12);
    }

    #[test]
    fn rotation_center_unchanged_without_fabrication_error() {
        let nominal = CalibrationState::nominal(&intr());
        let out =
            calibrate_rotation_center(&nominal, &sweep((400.0, 300.0), 120.0, &TWELVE)).unwrap();
        assert_close!(out.state.rotation_center.u, 400.0, 1e-9);
        assert_close!(out.state.rotation_center.v, 300.0, 1e-9);
    }

    #[test]
    fn rotation_calibration_guards() {
        let nominal = CalibrationState::nominal(&intr());
        let two = sweep((400.0, 300.0), 50.0, &[0.0, 90.0]);
        assert!(matches!(
            calibrate_rotation_center(&nominal, &two),
            Err(VlpError::InvalidInput(_))
        ));
        let partial = sweep((400.0, 300.0), 50.0, &[0.0, 30.0, 60.0, 90.0]);
        let out = calibrate_rotation_center(&nominal, &partial).unwrap();
        assert!(matches!(
            out.warning,
            Some(CalibrationWarning::InsufficientSweep { .. })
        ));
    }

    fn samples(points: &[(f64, f64)]) -> Vec<DispersionSample> {
        points
            .iter()
            .map(|&(x, y)| DispersionSample {
                plan_estimate: Vector2::new(x, y),
            })
            .collect()
    }

    #[test]
    fn dispersion_mean_offset() {
        let state = CalibrationState::nominal(&intr());
        let out = calibrate_dispersion(
            &state,
            &samples(&[(1.0, 2.0), (3.0, 2.0), (2.0, 0.0), (2.0, 4.0)]),
            Vector2::zeros(),
            &intr(),
        )
        .unwrap();
        assert_eq!(out.state.dispersion_offset, [2.0, 2.0]);
        assert_close!(out.state.dispersion_radius_mm, 2.0, 1e-12);
        assert_eq!(out.state.rotation_center, state.rotation_center);
    }

    #[test]
    fn dispersion_at_reference_is_zero() {
        let out = calibrate_dispersion(
            &CalibrationState::nominal(&intr()),
            &samples(&[(5.0, -1.0); 6]),
            Vector2::new(5.0, -1.0),
            &intr(),
        )
        .unwrap();
        assert_eq!(out.state.dispersion_offset, [0.0, 0.0]);
        assert_eq!(out.state.dispersion_radius_mm, 0.0);
    }

    #[test]
    fn dispersion_pixel_literal_shifts_center() {
        let i = intr();
        let state = CalibrationState::nominal(&i).with_mode(DispersionMode::PixelLiteral);
        let out =
            calibrate_dispersion(&state, &samples(&[(0.3, -0.6)]), Vector2::zeros(), &i).unwrap();
        assert_close!(out.state.rotation_center.u, 400.0 + 0.3 / 0.003, 1e-9);
        assert_close!(out.state.rotation_center.v, 300.0 - 0.6 / 0.003, 1e-9);
    }

    #[test]
    fn dispersion_accumulates() {
        let i = intr();
        let first = calibrate_dispersion(
            &CalibrationState::nominal(&i),
            &samples(&[(7.0, -4.0)]),
            Vector2::zeros(),
            &i,
        )
        .unwrap();
        let second =
            calibrate_dispersion(&first.state, &samples(&[(0.0, 0.0)]), Vector2::zeros(), &i)
                .unwrap();
        assert_eq!(second.measured_offset, Vector2::zeros());
        assert_eq!(second.state.dispersion_offset, [7.0, -4.0]);
    }

    #[test]
    fn calibration_file_round_trip() {
        let default = CalibrationState::nominal(&intr());
        let text = calibration_to_string(&default).unwrap();
        assert_eq!(calibration_from_str(&text, "mem").unwrap(), default);

        let mut state = default.with_mode(DispersionMode::PixelLiteral);
        state.rotation_center = PixelPoint::new(405.123_456_789_012_3, 0.1 + 0.2);
        state.dispersion_offset = [1.0 / 3.0, -7.000000000000001];
        state.dispersion_radius_mm = std::f64::consts::PI;
        state.provenance.rotation_samples = 12;
        state.provenance.rotation_fit_residual_px = 1e-17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.toml");
        save_calibration(&state, &path).unwrap();
        let back = load_calibration(&path).unwrap();
        assert_eq!(back, state);
        assert_eq!(
            back.rotation_center.v.to_bits(),
            state.rotation_center.v.to_bits()
        );
    }

    #[test]
    fn truncated_calibration_names_missing_field() {
        let text = calibration_to_string(&CalibrationState::nominal(&intr())).unwrap();
        let truncated: String = text
            .lines()
            .filter(|l| !l.starts_with("dispersion_mode"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = calibration_from_str(&truncated, "calib.toml").unwrap_err();
        assert!(err.to_string().contains("dispersion_mode"), "{err}");
    }
}
