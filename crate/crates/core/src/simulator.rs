//! Deterministic synthetic scenes.
//!
//! A [`Simulator`] owns a scene and an [`ErrorModel`]. Frames are produced by
//! the ground-truth projection with the error sources injected:
//!
//! - installation error: anchors are displaced once, when the simulator is built;
//! - measurement error: Gaussian pixel noise per detection, optional rounding;
//! - coordinate-conversion shift: a constant world-plan offset added to the
//!   receiver position before projection, so uncorrected fixes land at
//!   `true + shift`;
//! - fabrication error: pixels are laid out about a true rotation center that
//!   may differ from the nominal principal point.
//!
//! Every random draw comes from a ChaCha stream seeded from the master seed and
//! the trial's own seed, so records do not depend on iteration order or on the
//! number of worker threads.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::calibration::{CalibrationState, DispersionSample, RotationSweepSample};
use crate::error::{Result, VlpError};
use crate::geometry::{
    image_to_pixel, project_to_image, CameraIntrinsics, PixelPoint, Pose, WorldPoint,
    DEFAULT_MIN_HEIGHT_MM,
};
use crate::solver::{solve_pose, AnchorTable, Detection, Frame, PoseEstimate};

const INSTALL_DOMAIN: u64 = 0x1;
const STATIC_DOMAIN: u64 = 0x2;
const DYNAMIC_DOMAIN: u64 = 0x3;
const SWEEP_DOMAIN: u64 = 0x4;
const DISPERSION_DOMAIN: u64 = 0x5;
const POSE_DRAW_TAG: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` within an experiment domain.
pub fn trial_seed(domain: u64, index: u64) -> u64 {
    mix64(mix64(domain.wrapping_add(0x632b_e59b_d9b4_e019)) ^ index)
}

fn rng_for(master_seed: u64, trial_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(master_seed) ^ mix64(trial_seed.wrapping_add(1)))
}

/// Room, luminaires and camera.
///
/// The world plan origin is the room center; `z = 0` is the floor and the
/// anchors hang at `z = room_mm[2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub anchors: AnchorTable,
    pub intrinsics: CameraIntrinsics,
    /// Length (x), width (y) and height (z) in millimeters.
    pub room_mm: [f64; 3],
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !self.room_mm.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(VlpError::InvalidInput(
                "room dimensions must be positive".into(),
            ));
        }
        for (uid, p) in self.anchors.iter() {
            if !self.contains_plan(p.plan()) {
                return Err(VlpError::InvalidInput(format!(
                    "anchor `{uid}` lies outside the room"
                )));
            }
            if (p.z - self.room_mm[2]).abs() > self.anchors.ceiling_tolerance_mm {
                return Err(VlpError::InvalidInput(format!(
                    "anchor `{uid}` at z = {} is not at the ceiling height {}",
                    p.z, self.room_mm[2]
                )));
            }
        }
        Ok(())
    }

    pub fn contains_plan(&self, p: Vector2<f64>) -> bool {
        p.x.abs() <= self.room_mm[0] / 2.0 && p.y.abs() <= self.room_mm[1] / 2.0
    }

    pub fn contains(&self, p: WorldPoint) -> bool {
        self.contains_plan(p.plan()) && (0.0..self.room_mm[2]).contains(&p.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub true_rotation_center: PixelPoint,
    /// Per-axis σ of the installation error, applied once per scene.
    pub anchor_position_noise_mm: f64,
    pub pixel_noise_sigma_px: f64,
    pub constant_plan_shift_mm: [f64; 2],
    pub quantize_pixels: bool,
    pub seed: u64,
}

impl ErrorModel {
    /// No injected error at all.
    pub fn zero(intr: &CameraIntrinsics, seed: u64) -> Self {
        Self {
            true_rotation_center: intr.principal_point,
            anchor_position_noise_mm: 0.0,
            pixel_noise_sigma_px: 0.0,
            constant_plan_shift_mm: [0.0, 0.0],
            quantize_pixels: false,
            seed,
        }
    }

    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<()> {
        if !(self.anchor_position_noise_mm >= 0.0 && self.anchor_position_noise_mm.is_finite()) {
            return Err(VlpError::InvalidInput(
                "anchor_position_noise_mm must be >= 0".into(),
            ));
        }
        if !(self.pixel_noise_sigma_px >= 0.0 && self.pixel_noise_sigma_px.is_finite()) {
            return Err(VlpError::InvalidInput(
                "pixel_noise_sigma_px must be >= 0".into(),
            ));
        }
        if !self.constant_plan_shift_mm.iter().all(|v| v.is_finite()) {
            return Err(VlpError::InvalidInput(
                "constant_plan_shift_mm must be finite".into(),
            ));
        }
        if !intr.contains(self.true_rotation_center) {
            return Err(VlpError::InvalidInput(
                "true_rotation_center lies outside the sensor".into(),
            ));
        }
        Ok(())
    }
}

/// One simulated observation and the solver's answer to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub trial_seed: u64,
    pub true_pose: Pose,
    pub frame: Frame,
    pub estimate: Result<PoseEstimate>,
}

impl TrialRecord {
    pub fn plan_error_mm(&self) -> Option<f64> {
        self.estimate
            .as_ref()
            .ok()
            .map(|e| (e.position.plan() - self.true_pose.position.plan()).norm())
    }
}

/// How the receiver heading is chosen per trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawPolicy {
    Fixed(f64),
    /// Uniform over `(−π, π]`, drawn from the trial's seed.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticGrid {
    pub x_range_mm: [f64; 2],
    pub y_range_mm: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    pub reps: usize,
    /// Receiver lens heights above the floor.
    pub heights_mm: Vec<f64>,
    pub yaw: YawPolicy,
}

impl StaticGrid {
    pub fn points(&self) -> Vec<Vector2<f64>> {
        let lerp = |r: [f64; 2], i: usize, n: usize| {
            if n == 1 {
                (r[0] + r[1]) / 2.0
            } else {
                r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for row in 0..self.rows {
            for col in 0..self.cols {
                out.push(Vector2::new(
                    lerp(self.x_range_mm, col, self.cols),
                    lerp(self.y_range_mm, row, self.rows),
                ));
            }
        }
        out
    }

    pub fn trial_count(&self) -> usize {
        self.rows * self.cols * self.reps * self.heights_mm.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRun {
    pub start_mm: [f64; 2],
    pub end_mm: [f64; 2],
    pub speed_mm_s: f64,
    pub frame_rate_hz: f64,
    pub height_mm: f64,
    pub yaw_rad: f64,
}

impl DynamicRun {
    pub fn duration_s(&self) -> f64 {
        (Vector2::from(self.end_mm) - Vector2::from(self.start_mm)).norm() / self.speed_mm_s
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s() * self.frame_rate_hz + 1e-9).floor() as usize + 1
    }
}

/// Twelve headings near a 30° lattice with ±5° uniform jitter.
pub fn default_sweep_yaws(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(SWEEP_DOMAIN, seed));
    (0..12)
        .map(|k| (k as f64 * 30.0 + rng.random_range(-5.0..=5.0)).to_radians())
        .collect()
}

pub struct Simulator {
    scene: Scene,
    err: ErrorModel,
    true_anchors: Vec<(String, WorldPoint)>,
}

impl Simulator {
    /// Validates the inputs and draws the installation error.
    pub fn new(scene: Scene, err: ErrorModel) -> Result<Self> {
        scene.validate()?;
        err.validate(&scene.intrinsics)?;
        let mut rng = rng_for(err.seed, trial_seed(INSTALL_DOMAIN, 0));
        let noise = Normal::new(0.0, err.anchor_position_noise_mm)
            .map_err(|e| VlpError::InvalidInput(format!("anchor noise: {e}")))?;
        let true_anchors = scene
            .anchors
            .iter()
            .map(|(uid, p)| {
                let d = [
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                ];
                (
                    uid.to_string(),
                    WorldPoint::new(p.x + d[0], p.y + d[1], p.z + d[2]),
                )
            })
            .collect();
        Ok(Self {
            scene,
            err,
            true_anchors,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.err
    }

    /// Anchor positions as physically installed (the table holds the surveyed ones).
    pub fn true_anchors(&self) -> &[(String, WorldPoint)] {
        &self.true_anchors
    }

    /// Projects every anchor with the injected errors; detections off the
    /// sensor are dropped. Fails when fewer than two anchors remain.
    pub fn generate_frame(&self, true_pose: &Pose, trial_seed: u64) -> Result<Frame> {
        let frame = self.render(true_pose, trial_seed)?;
        if frame.detections.len() < 2 {
            return Err(VlpError::NoVisibleAnchors {
                visible: frame.detections.len(),
            });
        }
        Ok(frame)
    }

    fn render(&self, true_pose: &Pose, trial_seed: u64) -> Result<Frame> {
        if !self.scene.contains(true_pose.position) {
            return Err(VlpError::InvalidInput(format!(
                "receiver ({}, {}, {}) is outside the room",
                true_pose.position.x, true_pose.position.y, true_pose.position.z
            )));
        }
        let intr = &self.scene.intrinsics;
        let mut rng = rng_for(self.err.seed, trial_seed);
        let noise = Normal::new(0.0, self.err.pixel_noise_sigma_px)
            .map_err(|e| VlpError::InvalidInput(format!("pixel noise: {e}")))?;
        let shifted = Pose {
            position: WorldPoint::new(
                true_pose.position.x + self.err.constant_plan_shift_mm[0],
                true_pose.position.y + self.err.constant_plan_shift_mm[1],
                true_pose.position.z,
            ),
            yaw_gamma: true_pose.yaw_gamma,
        };
        let mut detections = Vec::with_capacity(self.true_anchors.len());
        for (uid, led) in &self.true_anchors {
            // draw for every anchor so the stream does not depend on visibility
            let (nu, nv) = (noise.sample(&mut rng), noise.sample(&mut rng));
            let Ok(image) =
                project_to_image(*led, &shifted, intr.focal_length_mm, DEFAULT_MIN_HEIGHT_MM)
            else {
                continue;
            };
            let ideal = image_to_pixel(image, intr, self.err.true_rotation_center);
            let mut centroid = PixelPoint::new(ideal.u + nu, ideal.v + nv);
            if self.err.quantize_pixels {
                centroid = PixelPoint::new(centroid.u.round(), centroid.v.round());
            }
            if intr.contains(centroid) {
                detections.push(Detection {
                    uid: uid.clone(),
                    centroid,
                });
            }
        }
        Ok(Frame::new(detections, 0.0))
    }

    fn trial(
        &self,
        index: usize,
        seed: u64,
        pose: Pose,
        timestamp_s: f64,
        calib: &CalibrationState,
    ) -> TrialRecord {
        let (frame, estimate) = match self.render(&pose, seed) {
            Ok(mut frame) => {
                frame.timestamp_s = timestamp_s;
                let estimate = if frame.detections.len() < 2 {
                    Err(VlpError::NoVisibleAnchors {
                        visible: frame.detections.len(),
                    })
                } else {
                    solve_pose(&frame, &self.scene.anchors, &self.scene.intrinsics, calib)
                };
                (frame, estimate)
            }
            Err(e) => (Frame::new(Vec::new(), timestamp_s), Err(e)),
        };
        TrialRecord {
            index,
            trial_seed: seed,
            true_pose: pose,
            frame,
            estimate,
        }
    }

    fn draw_yaw(&self, policy: YawPolicy, seed: u64) -> f64 {
        match policy {
            YawPolicy::Fixed(yaw) => yaw,
            YawPolicy::Uniform => {
                let mut rng = rng_for(self.err.seed, seed ^ POSE_DRAW_TAG);
                // (−π, π]
                -rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            }
        }
    }

    /// Rows × cols grid, `reps` fixes per spot, for every height.
    pub fn run_static_grid(
        &self,
        grid: &StaticGrid,
        calib: &CalibrationState,
    ) -> Result<Vec<TrialRecord>> {
        for r in [grid.x_range_mm, grid.y_range_mm] {
            if !(r[0] <= r[1]) {
                return Err(VlpError::InvalidInput("grid range must be ordered".into()));
            }
        }
        if grid.rows == 0 || grid.cols == 0 || grid.reps == 0 || grid.heights_mm.is_empty() {
            return Err(VlpError::InvalidInput(
                "grid needs rows, cols, reps and heights".into(),
            ));
        }
        let spots = grid.points();
        for p in &spots {
            if !self.scene.contains_plan(*p) {
                return Err(VlpError::InvalidInput(
                    "grid rectangle extends outside the room".into(),
                ));
            }
        }
        let mut poses = Vec::with_capacity(grid.trial_count());
        for &h in &grid.heights_mm {
            for spot in &spots {
                for _ in 0..grid.reps {
                    poses.push(WorldPoint::new(spot.x, spot.y, h));
                }
            }
        }
        Ok(poses
            .into_par_iter()
            .enumerate()
            .map(|(i, position)| {
                let seed = trial_seed(STATIC_DOMAIN, i as u64);
                let pose = Pose::new(position, self.draw_yaw(grid.yaw, seed));
                self.trial(i, seed, pose, 0.0, calib)
            })
            .collect())
    }

    /// Constant-velocity straight run sampled at the frame rate.
    pub fn run_dynamic(
        &self,
        run: &DynamicRun,
        calib: &CalibrationState,
    ) -> Result<Vec<TrialRecord>> {
        if !(run.speed_mm_s > 0.0 && run.speed_mm_s.is_finite()) {
            return Err(VlpError::InvalidInput("speed must be > 0".into()));
        }
        if !(run.frame_rate_hz > 0.0 && run.frame_rate_hz.is_finite()) {
            return Err(VlpError::InvalidInput("frame rate must be > 0".into()));
        }
        let start = Vector2::from(run.start_mm);
        let end = Vector2::from(run.end_mm);
        let length = (end - start).norm();
        if !(length > 0.0) {
            return Err(VlpError::InvalidInput(
                "dynamic run start and end coincide".into(),
            ));
        }
        if !self.scene.contains_plan(start) || !self.scene.contains_plan(end) {
            return Err(VlpError::InvalidInput("dynamic run leaves the room".into()));
        }
        let dir = (end - start) / length;
        let n = run.frame_count();
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let t = i as f64 / run.frame_rate_hz;
                let p = start + dir * (run.speed_mm_s * t).min(length);
                let seed = trial_seed(DYNAMIC_DOMAIN, i as u64);
                let pose = Pose::new(WorldPoint::new(p.x, p.y, run.height_mm), run.yaw_rad);
                self.trial(i, seed, pose, t, calib)
            })
            .collect())
    }

    /// Spins the receiver in place and records the tracked anchor's centroid
    /// at every heading.
    pub fn run_rotation_sweep(
        &self,
        position: Vector2<f64>,
        height_mm: f64,
        yaw_angles: &[f64],
        tracked_uid: &str,
    ) -> Result<Vec<RotationSweepSample>> {
        if self.scene.anchors.get(tracked_uid).is_none() {
            return Err(VlpError::UnknownUid(tracked_uid.to_string()));
        }
        yaw_angles
            .iter()
            .enumerate()
            .map(|(i, &yaw)| {
                let pose = Pose::new(WorldPoint::new(position.x, position.y, height_mm), yaw);
                let frame = self.render(&pose, trial_seed(SWEEP_DOMAIN, i as u64))?;
                let visible = frame.detections.len();
                let det = frame
                    .detections
                    .into_iter()
                    .find(|d| d.uid == tracked_uid)
                    .ok_or(VlpError::NoVisibleAnchors { visible })?;
                Ok(RotationSweepSample {
                    yaw_index: i,
                    centroid: det.centroid,
                })
            })
            .collect()
    }

    /// `n` fixes at the reference point, solved under `calib`.
    pub fn run_dispersion(
        &self,
        reference: Vector2<f64>,
        height_mm: f64,
        n: usize,
        yaw: YawPolicy,
        calib: &CalibrationState,
    ) -> Vec<TrialRecord> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(DISPERSION_DOMAIN, i as u64);
                let pose = Pose::new(
                    WorldPoint::new(reference.x, reference.y, height_mm),
                    self.draw_yaw(yaw, seed),
                );
                self.trial(i, seed, pose, 0.0, calib)
            })
            .collect()
    }
}

/// Successful fixes of a dispersion run as calibration samples.
pub fn dispersion_samples(records: &[TrialRecord]) -> Vec<DispersionSample> {
    records
        .iter()
        .filter_map(|r| r.estimate.as_ref().ok())
        .map(|e| DispersionSample {
            plan_estimate: e.position.plan(),
        })
        .collect()
}
