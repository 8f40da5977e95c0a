//! `vlp`: calibrate, simulate and solve from the command line.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vlp_core::calibration::{
    load_calibration, save_calibration, CalibrationState, CalibrationWarning, DispersionMode,
};
use vlp_core::scenario::{dump_frames, with_threads, ExperimentKind, Scenario, PRESETS};
use vlp_core::solver::{solve_pose, AnchorTable, Frame};
use vlp_core::VlpError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vlp",
    version,
    about = "Image-sensor visible light positioning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a rotation sweep and fit the rotation center.
    CalibrateRotation(CalibrateArgs),
    /// Simulate fixes at the reference point and estimate the plan shift.
    CalibrateDispersion(DispersionArgs),
    /// Run the configured static or dynamic experiment and write a report.
    Simulate(SimulateArgs),
    /// Solve one recorded frame.
    Solve(SolveArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled scenario: static-2led, static-3led, dynamic-x, dynamic-y.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Calibration file to start from (defaults to the nominal principal point).
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Calibration file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DispersionArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Calibration file to write.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's dispersion mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<DispersionMode>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write every simulated frame and the anchor table.
    #[arg(long)]
    dump_frames: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Detections, `uid,u,v` rows.
    #[arg(long)]
    frame: PathBuf,
    /// Anchor table, `uid,x_mm,y_mm,z_mm` rows.
    #[arg(long)]
    anchors: PathBuf,
    /// Scenario supplying intrinsics and the ceiling tolerance.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    calibration: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DispersionMode, String> {
    match s {
        "world_plane" => Ok(DispersionMode::WorldPlane),
        "pixel_literal" => Ok(DispersionMode::PixelLiteral),
        _ => Err(format!("`{s}` is not one of world_plane, pixel_literal")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CalibrateRotation(a) => calibrate_rotation(a),
        Command::CalibrateDispersion(a) => calibrate_dispersion(a),
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &VlpError) -> u8 {
    match e {
        VlpError::InvalidInput(_)
        | VlpError::Parse { .. }
        | VlpError::UnknownUid(_)
        | VlpError::EmptyInput(_)
        | VlpError::Io { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn load_scenario(
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<Scenario, VlpError> {
    let s = match (config, preset) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => Scenario::preset(name)?,
        (None, None) => {
            return Err(VlpError::InvalidInput(format!(
                "give --config <path> or --preset <{}>",
                PRESETS.join("|")
            )))
        }
    };
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn load_state(scenario: &Scenario, path: Option<&Path>) -> Result<CalibrationState, VlpError> {
    let state = match path {
        Some(p) => load_calibration(p)?,
        None => scenario.nominal_calibration(),
    };
    state.validate(scenario.intrinsics())?;
    Ok(state)
}

struct Prepared {
    scenario: Scenario,
    state: CalibrationState,
    threads: usize,
}

fn prepare(a: &ScenarioArgs) -> Result<Prepared, VlpError> {
    let scenario = load_scenario(a.config.as_deref(), a.preset.as_deref(), a.seed)?;
    let state = load_state(&scenario, a.calibration.as_deref())?;
    Ok(Prepared {
        scenario,
        state,
        threads: a.threads,
    })
}

fn calibrate_rotation(a: CalibrateArgs) -> Result<(), VlpError> {
    let p = prepare(&a.scenario)?;
    let cal = with_threads(p.threads, || {
        let sim = p.scenario.simulator()?;
        p.scenario.calibrate_rotation(&sim, &p.state)
    })??;
    save_calibration(&cal.state, &a.out)?;
    let c = cal.state.rotation_center;
    println!("rotation_center_px = ({}, {})", c.u, c.v);
    println!("fit_radius_px = {}", cal.fit.circle.radius);
    println!("fit_residual_px = {}", cal.fit.rms_residual);
    println!(
        "sweep_coverage_deg = {:.1}",
        cal.state.provenance.rotation_sweep_coverage_deg
    );
    if let Some(CalibrationWarning::InsufficientSweep { coverage_deg }) = cal.warning {
        eprintln!("warning: sweep covers only {coverage_deg:.1} degrees; the center is poorly constrained");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn calibrate_dispersion(a: DispersionArgs) -> Result<(), VlpError> {
    let mut p = prepare(&a.scenario)?;
    if let Some(mode) = a.mode {
        p.scenario.config.dispersion.mode = mode;
    }
    let cal = with_threads(p.threads, || {
        let sim = p.scenario.simulator()?;
        p.scenario.calibrate_dispersion(&sim, &p.state)
    })??;
    save_calibration(&cal.state, &a.out)?;
    let [dx, dy] = cal.state.dispersion_offset;
    println!(
        "measured_offset_cm = ({:.4}, {:.4})",
        cal.measured_offset.x / 10.0,
        cal.measured_offset.y / 10.0
    );
    println!(
        "dispersion_offset_cm = ({:.4}, {:.4})",
        dx / 10.0,
        dy / 10.0
    );
    println!(
        "dispersion_radius_cm = {:.4}",
        cal.state.dispersion_radius_mm / 10.0
    );
    println!("samples = {}", cal.state.provenance.dispersion_samples);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), VlpError> {
    let p = prepare(&a.scenario)?;
    let outcome = with_threads(p.threads, || {
        let sim = p.scenario.simulator()?;
        p.scenario.run_experiment(&sim, &p.state)
    })??;
    p.scenario.write_report(&outcome, &a.out)?;
    if a.dump_frames {
        dump_frames(&a.out, &p.scenario, &outcome.records)?;
    }
    let s = &outcome.summary;
    let kind = match outcome.kind {
        ExperimentKind::Static => "static",
        ExperimentKind::Dynamic => "dynamic",
    };
    println!(
        "experiment = {kind}, seed = {}, trials = {}, failed = {}",
        p.scenario.seed(),
        s.n + s.n_failed,
        s.n_failed
    );
    println!(
        "error_cm: mean {:.3}  rms {:.3}  p50 {:.3}  p90 {:.3}  max {:.3}",
        s.mean_mm / 10.0,
        s.rms_mm / 10.0,
        s.p50_mm / 10.0,
        s.p90_mm / 10.0,
        s.max_mm / 10.0
    );
    if let (Some(line), Some((start, end))) = (outcome.fitted_line, outcome.command_line) {
        println!(
            "fitted line: angle to command {:.4} deg, rms residual {:.3} cm",
            line.angle_to(end - start).to_degrees(),
            line.rms_residual_mm / 10.0
        );
    }
    println!("report written to {}", a.out.display());
    Ok(())
}

fn solve(a: SolveArgs) -> Result<(), VlpError> {
    let scenario = match (&a.config, &a.preset) {
        (None, None) => Scenario::preset("static-2led")?,
        (c, p) => load_scenario(c.as_deref(), p.as_deref(), None)?,
    };
    let intr = *scenario.intrinsics();
    let state = load_state(&scenario, a.calibration.as_deref())?;
    let anchors = AnchorTable::load(&a.anchors, scenario.config.scene.ceiling_tolerance_mm)?;
    let frame = Frame::load(&a.frame)?;
    let est = solve_pose(&frame, &anchors, &intr, &state)?;
    println!("x_mm = {}", est.position.x);
    println!("y_mm = {}", est.position.y);
    println!("z_mm = {}", est.position.z);
    println!("yaw_rad = {}", est.yaw);
    println!("yaw_deg = {}", est.yaw.to_degrees());
    println!("height_h_mm = {}", est.height_h);
    println!("n_leds_used = {}", est.n_leds_used);
    println!("plan_residual_mm = {}", est.plan_residual_mm);
    println!("height_spread_mm = {}", est.height_spread_mm);
    println!("yaw_residual = {}", est.yaw_residual);
    Ok(())
}
