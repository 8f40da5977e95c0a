//! Scenario configuration files, bundled presets and experiment drivers.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! seed = 42
//!
//! [scene]
//! room_mm = [2000.0, 1100.0, 1600.0]      # L x W x H, plan origin at the room center
//! ceiling_tolerance_mm = 1.0
//! anchors_file = "anchors.csv"              # uid,x_mm,y_mm,z_mm; relative to the config
//! # or inline: [[scene.anchors]] uid = "A", x_mm = ..., y_mm = ..., z_mm = ...
//!
//! [scene.intrinsics]
//! focal_length_mm = 3.0
//! pixel_pitch_u_mm = 0.003
//! pixel_pitch_v_mm = 0.003
//! principal_point_px = [400.0, 300.0]       # defaults to the sensor midpoint
//! resolution_px = [800, 600]
//!
//! [error]
//! true_rotation_center_px = [405.0, 303.0]  # defaults to the principal point
//! anchor_position_noise_mm = 0.0
//! pixel_noise_sigma_px = 0.3
//! constant_plan_shift_mm = [7.0, -4.0]
//! quantize_pixels = false
//!
//! [experiment]
//! kind = "static"                           # or "dynamic"
//! plan_only = true
//! static = { x_range_mm = [-200.0, 200.0], y_range_mm = [-150.0, 150.0], rows = 6, cols = 6,
//!            reps = 12, heights_mm = [0.0], yaw = "uniform" }
//! dynamic = { start_mm = [-350.0, 0.0], end_mm = [350.0, 0.0], speed_mm_s = 40.0,
//!             frame_rate_hz = 10.0, height_mm = 0.0, yaw_deg = 0.0 }
//!
//! [sweep]
//! position_mm = [0.0, 0.0]
//! height_mm = 0.0
//! tracked_uid = "B"
//! # yaw_deg = [0.0, 31.0, ...]              # default: 12 headings, 30° ± 5°
//!
//! [dispersion]
//! reference_mm = [0.0, 0.0]
//! height_mm = 0.0
//! samples = 100
//! mode = "world_plane"                      # or "pixel_literal"
//! yaw = "uniform"
//! ```
//!
//! Omitted fields default to the `static-2led` scene and grid with no injected error.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{
    calibrate_dispersion, calibrate_rotation_center, toml_error, CalibrationState,
    DispersionCalibration, DispersionMode, RotationCalibration,
};
use crate::error::{Result, VlpError};
use crate::geometry::{CameraIntrinsics, PixelPoint, WorldPoint};
use crate::metrics::{
    command_line_errors, emit_report, fit_line, record_errors, summarize, ErrorSummary, FittedLine,
    Report, ReportProvenance,
};
use crate::simulator::{
    default_sweep_yaws, dispersion_samples, DynamicRun, ErrorModel, Scene, Simulator, StaticGrid,
    TrialRecord, YawPolicy,
};
use crate::solver::{AnchorTable, DEFAULT_CEILING_TOLERANCE_MM};

/// Names accepted by [`Scenario::preset`].
pub const PRESETS: [&str; 4] = ["static-2led", "static-3led", "dynamic-x", "dynamic-y"];

fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "static-2led" => Some(include_str!("../presets/static-2led.toml")),
        "static-3led" => Some(include_str!("../presets/static-3led.toml")),
        "dynamic-x" => Some(include_str!("../presets/dynamic-x.toml")),
        "dynamic-y" => Some(include_str!("../presets/dynamic-y.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub error: ErrorConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub dispersion: DispersionConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_room")]
    pub room_mm: [f64; 3],
    #[serde(default = "default_ceiling_tolerance")]
    pub ceiling_tolerance_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors_file: Option<PathBuf>,
    /// Inline anchors; the default 2-LED pair when neither this nor `anchors_file` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<AnchorConfig>>,
    #[serde(default)]
    pub intrinsics: IntrinsicsConfig,
}

fn default_room() -> [f64; 3] {
    [2000.0, 1100.0, 1600.0]
}

fn default_ceiling_tolerance() -> f64 {
    DEFAULT_CEILING_TOLERANCE_MM
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room_mm: default_room(),
            ceiling_tolerance_mm: default_ceiling_tolerance(),
            anchors_file: None,
            anchors: None,
            intrinsics: IntrinsicsConfig::default(),
        }
    }
}

fn default_anchors() -> Vec<AnchorConfig> {
    vec![
        AnchorConfig {
            uid: "A".into(),
            x_mm: -150.0,
            y_mm: 0.0,
            z_mm: 1600.0,
        },
        AnchorConfig {
            uid: "B".into(),
            x_mm: 150.0,
            y_mm: 0.0,
            z_mm: 1600.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub uid: String,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub focal_length_mm: f64,
    pub pixel_pitch_u_mm: f64,
    pub pixel_pitch_v_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point_px: Option<[f64; 2]>,
    pub resolution_px: [u32; 2],
}

impl Default for IntrinsicsConfig {
    fn default() -> Self {
        let d = CameraIntrinsics::default();
        Self {
            focal_length_mm: d.focal_length_mm,
            pixel_pitch_u_mm: d.pixel_pitch_u_mm,
            pixel_pitch_v_mm: d.pixel_pitch_v_mm,
            principal_point_px: None,
            resolution_px: [d.resolution_u, d.resolution_v],
        }
    }
}

impl IntrinsicsConfig {
    pub fn resolve(&self) -> CameraIntrinsics {
        let [ru, rv] = self.resolution_px;
        let mut intr =
            CameraIntrinsics::centered(self.focal_length_mm, self.pixel_pitch_u_mm, ru, rv);
        intr.pixel_pitch_v_mm = self.pixel_pitch_v_mm;
        if let Some([u, v]) = self.principal_point_px {
            intr.principal_point = PixelPoint::new(u, v);
        }
        intr
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_rotation_center_px: Option<[f64; 2]>,
    #[serde(default)]
    pub anchor_position_noise_mm: f64,
    #[serde(default)]
    pub pixel_noise_sigma_px: f64,
    #[serde(default)]
    pub constant_plan_shift_mm: [f64; 2],
    #[serde(default)]
    pub quantize_pixels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default = "default_true")]
    pub plan_only: bool,
    #[serde(default, rename = "static")]
    pub static_grid: StaticConfig,
    #[serde(default)]
    pub dynamic: DynamicConfig,
}

fn default_true() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Static,
            plan_only: true,
            static_grid: StaticConfig::default(),
            dynamic: DynamicConfig::default(),
        }
    }
}

/// Receiver heading: `"uniform"` or a fixed angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YawConfig {
    Fixed(f64),
    Named(YawName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawName {
    Uniform,
}

impl Default for YawConfig {
    fn default() -> Self {
        YawConfig::Named(YawName::Uniform)
    }
}

impl YawConfig {
    fn policy(self) -> YawPolicy {
        match self {
            YawConfig::Fixed(deg) => YawPolicy::Fixed(deg.to_radians()),
            YawConfig::Named(YawName::Uniform) => YawPolicy::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub x_range_mm: [f64; 2],
    pub y_range_mm: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    pub reps: usize,
    pub heights_mm: Vec<f64>,
    #[serde(default)]
    pub yaw: YawConfig,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            x_range_mm: [-200.0, 200.0],
            y_range_mm: [-150.0, 150.0],
            rows: 6,
            cols: 6,
            reps: 12,
            heights_mm: vec![0.0],
            yaw: YawConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicConfig {
    pub start_mm: [f64; 2],
    pub end_mm: [f64; 2],
    pub speed_mm_s: f64,
    pub frame_rate_hz: f64,
    pub height_mm: f64,
    #[serde(default)]
    pub yaw_deg: f64,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            start_mm: [-350.0, 0.0],
            end_mm: [350.0, 0.0],
            speed_mm_s: 40.0,
            frame_rate_hz: 10.0,
            height_mm: 0.0,
            yaw_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub position_mm: [f64; 2],
    pub height_mm: f64,
    /// Defaults to the last anchor in uid order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_uid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<Vec<f64>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            position_mm: [0.0, 0.0],
            height_mm: 0.0,
            tracked_uid: None,
            yaw_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub reference_mm: [f64; 2],
    pub height_mm: f64,
    pub samples: usize,
    #[serde(default)]
    pub mode: DispersionMode,
    #[serde(default)]
    pub yaw: YawConfig,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self {
            reference_mm: [0.0, 0.0],
            height_mm: 0.0,
            samples: 100,
            mode: DispersionMode::WorldPlane,
            yaw: YawConfig::default(),
        }
    }
}

/// A validated scenario, ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub scene: Scene,
    pub error_model: ErrorModel,
}

/// Result of one static or dynamic experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub kind: ExperimentKind,
    pub records: Vec<TrialRecord>,
    /// Per-record error feeding the summary (truth distance for static runs,
    /// command-line distance for dynamic runs).
    pub errors: Vec<Option<f64>>,
    pub summary: ErrorSummary,
    pub fitted_line: Option<FittedLine>,
    pub command_line: Option<(Vector2<f64>, Vector2<f64>)>,
}

impl Scenario {
    pub fn from_toml_str(text: &str, source_name: &str, base_dir: &Path) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| toml_error(e, text, source_name))?;
        Self::from_config(config, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VlpError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, &path.display().to_string(), base)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| {
            VlpError::InvalidInput(format!(
                "unknown preset `{name}`; available: {}",
                PRESETS.join(", ")
            ))
        })?;
        Self::from_toml_str(text, &format!("preset:{name}"), Path::new("."))
    }

    /// Resolves anchors and validates every section.
    pub fn from_config(mut config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let sc = &config.scene;
        if !(sc.ceiling_tolerance_mm >= 0.0) {
            return Err(field_error("scene.ceiling_tolerance_mm", "must be >= 0"));
        }
        let anchors = match (&sc.anchors_file, &sc.anchors) {
            (Some(_), Some(_)) => {
                return Err(field_error(
                    "scene.anchors",
                    "give either anchors_file or inline anchors, not both",
                ))
            }
            (Some(file), None) => {
                let path = base_dir.join(file);
                AnchorTable::load(&path, sc.ceiling_tolerance_mm)
                    .map_err(|e| prefix("scene.anchors_file", e))?
            }
            (None, inline) => AnchorTable::new(
                inline
                    .clone()
                    .unwrap_or_else(default_anchors)
                    .iter()
                    .map(|a| (a.uid.clone(), WorldPoint::new(a.x_mm, a.y_mm, a.z_mm))),
                sc.ceiling_tolerance_mm,
            )
            .map_err(|e| prefix("scene.anchors", e))?,
        };
        let intrinsics = sc.intrinsics.resolve();
        intrinsics
            .validate()
            .map_err(|e| prefix("scene.intrinsics", e))?;
        let scene = Scene {
            anchors,
            intrinsics,
            room_mm: sc.room_mm,
        };
        scene.validate().map_err(|e| prefix("scene", e))?;

        let ec = &config.error;
        let error_model = ErrorModel {
            true_rotation_center: ec
                .true_rotation_center_px
                .map(|[u, v]| PixelPoint::new(u, v))
                .unwrap_or(intrinsics.principal_point),
            anchor_position_noise_mm: ec.anchor_position_noise_mm,
            pixel_noise_sigma_px: ec.pixel_noise_sigma_px,
            constant_plan_shift_mm: ec.constant_plan_shift_mm,
            quantize_pixels: ec.quantize_pixels,
            seed: config.seed,
        };
        error_model
            .validate(&intrinsics)
            .map_err(|e| prefix("error", e))?;

        if config.sweep.tracked_uid.is_none() {
            config.sweep.tracked_uid = scene.anchors.iter().last().map(|(uid, _)| uid.to_string());
        }
        let scenario = Self {
            config,
            scene,
            error_model,
        };
        scenario.validate_experiments()?;
        Ok(scenario)
    }

    fn validate_experiments(&self) -> Result<()> {
        let c = &self.config;
        let ceiling = self.scene.room_mm[2];
        let height = |field: &str, h: f64| -> Result<()> {
            if !h.is_finite() || h < 0.0 {
                return Err(field_error(
                    field,
                    &format!("camera height {h} mm is below the floor"),
                ));
            }
            if h >= ceiling {
                return Err(field_error(
                    field,
                    &format!("camera height {h} mm is at or above the ceiling"),
                ));
            }
            Ok(())
        };
        let inside = |field: &str, p: [f64; 2]| -> Result<()> {
            if !p.iter().all(|v| v.is_finite()) || !self.scene.contains_plan(Vector2::from(p)) {
                return Err(field_error(
                    field,
                    &format!("({}, {}) lies outside the room", p[0], p[1]),
                ));
            }
            Ok(())
        };

        let s = &c.experiment.static_grid;
        if s.rows == 0 || s.cols == 0 || s.reps == 0 {
            return Err(field_error(
                "experiment.static",
                "rows, cols and reps must be >= 1",
            ));
        }
        if s.heights_mm.is_empty() {
            return Err(field_error(
                "experiment.static.heights_mm",
                "needs at least one height",
            ));
        }
        for (i, h) in s.heights_mm.iter().enumerate() {
            height(&format!("experiment.static.heights_mm[{i}]"), *h)?;
        }
        for (name, r) in [("x_range_mm", s.x_range_mm), ("y_range_mm", s.y_range_mm)] {
            if !(r[0] <= r[1]) {
                return Err(field_error(
                    &format!("experiment.static.{name}"),
                    "range must be ordered",
                ));
            }
        }
        inside(
            "experiment.static.x_range_mm/y_range_mm",
            [s.x_range_mm[0], s.y_range_mm[0]],
        )?;
        inside(
            "experiment.static.x_range_mm/y_range_mm",
            [s.x_range_mm[1], s.y_range_mm[1]],
        )?;

        let d = &c.experiment.dynamic;
        inside("experiment.dynamic.start_mm", d.start_mm)?;
        inside("experiment.dynamic.end_mm", d.end_mm)?;
        if d.start_mm == d.end_mm {
            return Err(field_error(
                "experiment.dynamic.end_mm",
                "must differ from start_mm",
            ));
        }
        if !(d.speed_mm_s > 0.0 && d.speed_mm_s.is_finite()) {
            return Err(field_error("experiment.dynamic.speed_mm_s", "must be > 0"));
        }
        if !(d.frame_rate_hz > 0.0 && d.frame_rate_hz.is_finite()) {
            return Err(field_error(
                "experiment.dynamic.frame_rate_hz",
                "must be > 0",
            ));
        }
        height("experiment.dynamic.height_mm", d.height_mm)?;

        let w = &c.sweep;
        inside("sweep.position_mm", w.position_mm)?;
        height("sweep.height_mm", w.height_mm)?;
        if let Some(uid) = &w.tracked_uid {
            if self.scene.anchors.get(uid).is_none() {
                return Err(field_error(
                    "sweep.tracked_uid",
                    &format!("`{uid}` is not in the anchor table"),
                ));
            }
        }
        if let Some(yaws) = &w.yaw_deg {
            if yaws.len() < 3 {
                return Err(field_error(
                    "sweep.yaw_deg",
                    &format!("needs at least 3 angles, got {}", yaws.len()),
                ));
            }
            if !yaws.iter().all(|y| y.is_finite()) {
                return Err(field_error("sweep.yaw_deg", "angles must be finite"));
            }
        }

        let p = &c.dispersion;
        inside("dispersion.reference_mm", p.reference_mm)?;
        height("dispersion.height_mm", p.height_mm)?;
        if p.samples == 0 {
            return Err(field_error("dispersion.samples", "must be >= 1"));
        }
        Ok(())
    }

    /// Same scenario with a different master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self.error_model.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.scene.intrinsics
    }

    pub fn nominal_calibration(&self) -> CalibrationState {
        CalibrationState::nominal(&self.scene.intrinsics)
    }

    /// SHA-256 of the resolved configuration (anchors inlined, seed included).
    pub fn config_hash(&self) -> String {
        let mut resolved = self.config.clone();
        resolved.scene.anchors_file = None;
        resolved.scene.anchors = Some(
            self.scene
                .anchors
                .iter()
                .map(|(uid, p)| AnchorConfig {
                    uid: uid.to_string(),
                    x_mm: p.x,
                    y_mm: p.y,
                    z_mm: p.z,
                })
                .collect(),
        );
        let text = toml::to_string(&resolved).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.scene.clone(), self.error_model)
    }

    pub fn sweep_yaws(&self) -> Vec<f64> {
        match &self.config.sweep.yaw_deg {
            Some(deg) => deg.iter().map(|d| d.to_radians()).collect(),
            None => default_sweep_yaws(self.config.seed),
        }
    }

    pub fn static_grid(&self) -> StaticGrid {
        let s = &self.config.experiment.static_grid;
        StaticGrid {
            x_range_mm: s.x_range_mm,
            y_range_mm: s.y_range_mm,
            rows: s.rows,
            cols: s.cols,
            reps: s.reps,
            heights_mm: s.heights_mm.clone(),
            yaw: s.yaw.policy(),
        }
    }

    pub fn dynamic_run(&self) -> DynamicRun {
        let d = &self.config.experiment.dynamic;
        DynamicRun {
            start_mm: d.start_mm,
            end_mm: d.end_mm,
            speed_mm_s: d.speed_mm_s,
            frame_rate_hz: d.frame_rate_hz,
            height_mm: d.height_mm,
            yaw_rad: d.yaw_deg.to_radians(),
        }
    }

    /// Rotation calibration from a simulated sweep.
    pub fn calibrate_rotation(
        &self,
        sim: &Simulator,
        base: &CalibrationState,
    ) -> Result<RotationCalibration> {
        let w = &self.config.sweep;
        let uid = w.tracked_uid.as_deref().unwrap_or_default();
        let samples = sim.run_rotation_sweep(
            Vector2::from(w.position_mm),
            w.height_mm,
            &self.sweep_yaws(),
            uid,
        )?;
        calibrate_rotation_center(base, &samples)
    }

    /// Dispersion calibration from simulated fixes at the reference point,
    /// solved under `base`. The configured dispersion mode is applied.
    pub fn calibrate_dispersion(
        &self,
        sim: &Simulator,
        base: &CalibrationState,
    ) -> Result<DispersionCalibration> {
        let p = &self.config.dispersion;
        let base = base.with_mode(p.mode);
        let reference = Vector2::from(p.reference_mm);
        let records = sim.run_dispersion(reference, p.height_mm, p.samples, p.yaw.policy(), &base);
        let samples = dispersion_samples(&records);
        if samples.is_empty() {
            let first = records
                .iter()
                .find_map(|r| r.estimate.as_ref().err().cloned());
            return Err(
                first.unwrap_or_else(|| VlpError::EmptyInput("no dispersion samples".into()))
            );
        }
        calibrate_dispersion(&base, &samples, reference, &self.scene.intrinsics)
    }

    /// Runs the configured experiment under `calib`.
    pub fn run_experiment(
        &self,
        sim: &Simulator,
        calib: &CalibrationState,
    ) -> Result<ExperimentOutcome> {
        match self.config.experiment.kind {
            ExperimentKind::Static => {
                let records = sim.run_static_grid(&self.static_grid(), calib)?;
                let errors = record_errors(&records, self.config.experiment.plan_only);
                let summary = summarize(&errors)?;
                Ok(ExperimentOutcome {
                    kind: ExperimentKind::Static,
                    records,
                    errors,
                    summary,
                    fitted_line: None,
                    command_line: None,
                })
            }
            ExperimentKind::Dynamic => {
                let run = self.dynamic_run();
                let records = sim.run_dynamic(&run, calib)?;
                let (start, end) = (Vector2::from(run.start_mm), Vector2::from(run.end_mm));
                let errors = command_line_errors(&records, start, end);
                let summary = summarize(&errors)?;
                let points: Vec<_> = records
                    .iter()
                    .filter_map(|r| r.estimate.as_ref().ok().map(|e| e.position.plan()))
                    .collect();
                let fitted_line = Some(fit_line(&points)?);
                Ok(ExperimentOutcome {
                    kind: ExperimentKind::Dynamic,
                    records,
                    errors,
                    summary,
                    fitted_line,
                    command_line: Some((start, end)),
                })
            }
        }
    }

    pub fn write_report(
        &self,
        outcome: &ExperimentOutcome,
        dir: impl AsRef<Path>,
    ) -> Result<Vec<PathBuf>> {
        let experiment = match outcome.kind {
            ExperimentKind::Static => "static",
            ExperimentKind::Dynamic => "dynamic",
        };
        let extra = vec![(
            "plan_only".to_string(),
            f64::from(u8::from(self.config.experiment.plan_only)),
        )];
        emit_report(
            dir,
            &Report {
                records: &outcome.records,
                errors: &outcome.errors,
                summary: &outcome.summary,
                provenance: ReportProvenance {
                    experiment: experiment.into(),
                    seed: self.config.seed,
                    config_hash: self.config_hash(),
                },
                fitted_line: outcome.fitted_line,
                command_line: outcome.command_line,
                extra,
            },
        )
    }
}

/// Writes every frame as `frames/trial_NNNNN.csv` plus the anchor table used
/// to solve them.
pub fn dump_frames(
    dir: impl AsRef<Path>,
    scenario: &Scenario,
    records: &[TrialRecord],
) -> Result<()> {
    let frames = dir.as_ref().join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| VlpError::io(&frames, e))?;
    for r in records {
        let path = frames.join(format!("trial_{:05}.csv", r.index));
        std::fs::write(&path, r.frame.to_csv_string()).map_err(|e| VlpError::io(&path, e))?;
    }
    let anchors = dir.as_ref().join("anchors.csv");
    std::fs::write(&anchors, scenario.scene.anchors.to_csv_string())
        .map_err(|e| VlpError::io(&anchors, e))
}

/// Runs `f` on a dedicated pool of `threads` workers (`0` = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| VlpError::InvalidInput(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn field_error(field: &str, message: &str) -> VlpError {
    VlpError::InvalidInput(format!("{field}: {message}"))
}

fn prefix(field: &str, e: VlpError) -> VlpError {
    match e {
        VlpError::InvalidInput(m) => VlpError::InvalidInput(format!("{field}: {m}")),
        other => other,
    }
}
