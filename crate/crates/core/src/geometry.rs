//! Coordinate systems and the transform chain world → camera → image → pixel.
//!
//! Conventions used throughout the crate:
//!
//! - lengths in millimeters, angles in radians;
//! - the world `z` axis points up, LEDs sit on the ceiling above the receiver;
//! - the camera looks up (+z), its image plane sits at `-f`, so a LED at
//!   vertical distance `H` maps to `(x, y) = (-f / H) * M(γ) * (ΔX, ΔY)` with
//!   `M(γ) = [[cos γ, sin γ], [-sin γ, cos γ]]`;
//! - pixel coordinates are real valued (sub-pixel centroids).
//!
//! Only the azimuth `γ` enters the positioning pipeline. The general
//! three-angle rotation is provided for completeness.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use std::f64::consts::PI;

use crate::error::{Result, VlpError};

/// Smallest vertical LED-to-lens distance accepted by [`project`].
pub const DEFAULT_MIN_HEIGHT_MM: f64 = 1e-6;

/// Smallest image-plane distance accepted by [`estimate_height`].
pub const IMAGE_DISTANCE_EPS_MM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn plan(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A point in the camera frame. For an LED above the receiver `z` equals
/// the vertical distance `H` and is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A point on the image plane, millimeters, origin at the rotation center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Sub-pixel sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_length_mm: f64,
    pub pixel_pitch_u_mm: f64,
    pub pixel_pitch_v_mm: f64,
    /// Nominal principal point `(u0, v0)`.
    pub principal_point: PixelPoint,
    pub resolution_u: u32,
    pub resolution_v: u32,
}

impl CameraIntrinsics {
    /// Square pixels with the principal point at the sensor midpoint.
    pub fn centered(
        focal_length_mm: f64,
        pixel_pitch_mm: f64,
        resolution_u: u32,
        resolution_v: u32,
    ) -> Self {
        Self {
            focal_length_mm,
            pixel_pitch_u_mm: pixel_pitch_mm,
            pixel_pitch_v_mm: pixel_pitch_mm,
            principal_point: PixelPoint::new(resolution_u as f64 / 2.0, resolution_v as f64 / 2.0),
            resolution_u,
            resolution_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(VlpError::InvalidInput(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        positive("focal_length_mm", self.focal_length_mm)?;
        positive("pixel_pitch_u_mm", self.pixel_pitch_u_mm)?;
        positive("pixel_pitch_v_mm", self.pixel_pitch_v_mm)?;
        if self.resolution_u == 0 || self.resolution_v == 0 {
            return Err(VlpError::InvalidInput("resolution must be nonzero".into()));
        }
        if !self.contains(self.principal_point) {
            return Err(VlpError::InvalidInput(format!(
                "principal point ({}, {}) outside the {}x{} sensor",
                self.principal_point.u,
                self.principal_point.v,
                self.resolution_u,
                self.resolution_v
            )));
        }
        Ok(())
    }

    /// Whether a pixel lies inside the closed sensor rectangle.
    pub fn contains(&self, p: PixelPoint) -> bool {
        p.is_finite()
            && (0.0..=self.resolution_u as f64).contains(&p.u)
            && (0.0..=self.resolution_v as f64).contains(&p.v)
    }
}

impl Default for CameraIntrinsics {
    /// 3 mm lens, 800 x 600 sensor, 3 µm square pixels.
    fn default() -> Self {
        Self::centered(3.0, 0.003, 800, 600)
    }
}

/// A 3x3 rotation together with the angles that generated it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    pub matrix: Matrix3<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Receiver pose: lens center position and azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: WorldPoint,
    pub yaw_gamma: f64,
}

impl Pose {
    pub fn new(position: WorldPoint, yaw_gamma: f64) -> Self {
        Self {
            position,
            yaw_gamma: normalize_angle(yaw_gamma),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Pixel to image-plane millimeters about `center`.
///
/// `center` is the nominal principal point before rotation calibration and the
/// fitted rotation center `(u1, v1)` after it.
pub fn pixel_to_image(
    p: PixelPoint,
    intr: &CameraIntrinsics,
    center: PixelPoint,
) -> Result<ImagePoint> {
    if !p.is_finite() || !center.is_finite() {
        return Err(VlpError::InvalidInput(format!(
            "non-finite pixel coordinate ({}, {}) or center ({}, {})",
            p.u, p.v, center.u, center.v
        )));
    }
    Ok(ImagePoint {
        x: (p.u - center.u) * intr.pixel_pitch_u_mm,
        y: (p.v - center.v) * intr.pixel_pitch_v_mm,
    })
}

/// Inverse of [`pixel_to_image`].
pub fn image_to_pixel(p: ImagePoint, intr: &CameraIntrinsics, center: PixelPoint) -> PixelPoint {
    PixelPoint {
        u: p.x / intr.pixel_pitch_u_mm + center.u,
        v: p.y / intr.pixel_pitch_v_mm + center.v,
    }
}

/// `Rx(α) · Ry(β) · Rz(γ)` with the element layout
///
/// ```text
/// Rx = [1 0 0; 0 cα sα; 0 -sα cα]
/// Ry = [cβ 0 -sβ; 0 1 0; sβ 0 cβ]
/// Rz = [cγ -sγ 0; sγ cγ 0; 0 0 1]
/// ```
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> RotationMatrix {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    #[rustfmt::skip]
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, ca, sa,
        0.0, -sa, ca,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
        cb, 0.0, -sb,
        0.0, 1.0, 0.0,
        sb, 0.0, cb,
    );
    RotationMatrix {
        matrix: rx * ry * yaw_matrix(sg, cg),
        alpha,
        beta,
        gamma,
    }
}

#[rustfmt::skip]
fn yaw_matrix(sin_g: f64, cos_g: f64) -> Matrix3<f64> {
    Matrix3::new(
        cos_g, -sin_g, 0.0,
        sin_g, cos_g, 0.0,
        0.0, 0.0, 1.0,
    )
}

/// `P_c = Rz(γ) (P - O_s)`.
pub fn world_to_camera(p: WorldPoint, pose: &Pose) -> CameraPoint {
    let (s, c) = pose.yaw_gamma.sin_cos();
    let d = p.to_vector() - pose.position.to_vector();
    let pc = yaw_matrix(s, c) * d;
    CameraPoint {
        x: pc.x,
        y: pc.y,
        z: pc.z,
    }
}

/// Similar-triangle projection `X_c / x = Y_c / y = Z_c / (-f)`.
pub fn camera_to_image(pc: CameraPoint, focal_length_mm: f64) -> Result<ImagePoint> {
    if !(pc.z.abs() > 0.0) {
        return Err(VlpError::DegenerateGeometry(format!(
            "camera-frame depth {} cannot be projected",
            pc.z
        )));
    }
    let k = -focal_length_mm / pc.z;
    Ok(ImagePoint {
        x: k * pc.x,
        y: k * pc.y,
    })
}

/// The 2x2 plan block `[[a, b], [-b, a]]` that maps world offsets to image
/// offsets (before the `-f/H` scale).
pub fn plan_block(a: f64, b: f64) -> Matrix2<f64> {
    Matrix2::new(a, b, -b, a)
}

/// Ground-truth forward model: LED world position to pixel, with the image
/// origin at `true_center`.
pub fn project(
    p: WorldPoint,
    pose: &Pose,
    intr: &CameraIntrinsics,
    true_center: PixelPoint,
) -> Result<PixelPoint> {
    project_with_min_height(p, pose, intr, true_center, DEFAULT_MIN_HEIGHT_MM)
}

pub fn project_with_min_height(
    p: WorldPoint,
    pose: &Pose,
    intr: &CameraIntrinsics,
    true_center: PixelPoint,
    min_height_mm: f64,
) -> Result<PixelPoint> {
    let image = project_to_image(p, pose, intr.focal_length_mm, min_height_mm)?;
    Ok(image_to_pixel(image, intr, true_center))
}

pub(crate) fn project_to_image(
    p: WorldPoint,
    pose: &Pose,
    focal_length_mm: f64,
    min_height_mm: f64,
) -> Result<ImagePoint> {
    let h = p.z - pose.position.z;
    if !(h > 0.0) || h < min_height_mm {
        return Err(VlpError::DegenerateGeometry(format!(
            "LED height above receiver {h} mm is below the minimum {min_height_mm} mm"
        )));
    }
    let (s, c) = pose.yaw_gamma.sin_cos();
    let offset = p.plan() - pose.position.plan();
    let img = plan_block(c, s) * offset * (-focal_length_mm / h);
    Ok(ImagePoint::new(img.x, img.y))
}

/// `H = f · D12 / d12` from two LEDs' plan distance and their image distance.
pub fn estimate_height(
    world_pair: (WorldPoint, WorldPoint),
    image_pair: (ImagePoint, ImagePoint),
    intr: &CameraIntrinsics,
) -> Result<f64> {
    let world_dist = (world_pair.0.plan() - world_pair.1.plan()).norm();
    let image_dist = (image_pair.0.to_vector() - image_pair.1.to_vector()).norm();
    if !(image_dist >= IMAGE_DISTANCE_EPS_MM) {
        return Err(VlpError::DegenerateGeometry(format!(
            "image distance {image_dist} mm between LEDs is below {IMAGE_DISTANCE_EPS_MM} mm"
        )));
    }
    if !(world_dist > 0.0) {
        return Err(VlpError::DegenerateGeometry(
            "LED pair coincides in plan".into(),
        ));
    }
    Ok(intr.focal_length_mm * world_dist / image_dist)
}

/// `Z_s = Z_i - H`, with `Z_i` the common ceiling height of the visible LEDs.
///
/// LED heights must agree within `tolerance_mm`; their mean is used.
pub fn receiver_z(led_z: &[f64], height_mm: f64, tolerance_mm: f64) -> Result<f64> {
    if led_z.is_empty() {
        return Err(VlpError::EmptyInput("no LED heights".into()));
    }
    if !(height_mm > 0.0) {
        return Err(VlpError::DegenerateGeometry(format!(
            "non-positive height H = {height_mm}"
        )));
    }
    let (lo, hi) = led_z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| {
            (lo.min(z), hi.max(z))
        });
    let spread = hi - lo;
    if spread > tolerance_mm {
        return Err(VlpError::InconsistentAnchors {
            spread_mm: spread,
            tolerance_mm,
        });
    }
    let ceiling = if spread == 0.0 {
        lo
    } else {
        led_z.iter().sum::<f64>() / led_z.len() as f64
    };
    Ok(ceiling - height_mm)
}
