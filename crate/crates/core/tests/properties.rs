use nalgebra::{Rotation2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlp_core::calibration::{
    calibrate_dispersion, calibration_from_str, calibration_to_string, fit_circle,
    min_enclosing_circle, CalibrationState,
};
use vlp_core::geometry::{
    angle_difference, project, CameraIntrinsics, PixelPoint, Pose, WorldPoint,
};
use vlp_core::metrics::{fit_line, read_trials_csv, summarize};
use vlp_core::scenario::{with_threads, Scenario};
use vlp_core::simulator::{dispersion_samples, ErrorModel, Simulator, YawPolicy};
use vlp_core::solver::{solve_pose, AnchorTable, Detection, Frame};
use vlp_core::VlpError;

fn frame_for(anchors: &AnchorTable, pose: &Pose, intr: &CameraIntrinsics) -> Frame {
    let detections = anchors
        .iter()
        .map(|(uid, p)| Detection {
            uid: uid.to_string(),
            centroid: project(p, pose, intr, intr.principal_point).unwrap(),
        })
        .collect();
    Frame::new(detections, 0.0)
}

fn ceiling(points: &[(f64, f64)]) -> AnchorTable {
    AnchorTable::new(
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (format!("L{i}"), WorldPoint::new(x, y, 1600.0))),
        1.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn yaw_equivariance(
        x in -300.0..300.0f64, y in -200.0..200.0f64, z in 0.0..1000.0f64,
        yaw in -3.0..3.0f64, delta in -3.0..3.0f64,
    ) {
        let intr = CameraIntrinsics::default();
        let calib = CalibrationState::nominal(&intr);
        let pose = Pose::new(WorldPoint::new(x, y, z), yaw);
        let base = [(x - 150.0, y - 40.0), (x + 120.0, y + 30.0), (x + 10.0, y + 140.0)];
        let rot = Rotation2::new(delta);
        let turned: Vec<(f64, f64)> = base
            .iter()
            .map(|&(px, py)| {
                let r = rot * Vector2::new(px - x, py - y);
                (x + r.x, y + r.y)
            })
            .collect();
        let a = ceiling(&base);
        let b = ceiling(&turned);
        let ea = solve_pose(&frame_for(&a, &pose, &intr), &a, &intr, &calib).unwrap();
        // the turned constellation seen through the original table
        let eb = solve_pose(&frame_for(&b, &pose, &intr), &a, &intr, &calib).unwrap();
        prop_assert!(angle_difference(eb.yaw, ea.yaw - delta).abs() < 1e-9);
        prop_assert!((ea.position.to_vector() - eb.position.to_vector()).norm() < 1e-9);
    }

    #[test]
    fn anchor_count_does_not_change_noiseless_pose(
        x in -300.0..300.0f64, y in -200.0..200.0f64, z in 0.0..1000.0f64, yaw in -3.0..3.0f64,
    ) {
        let intr = CameraIntrinsics::default();
        let calib = CalibrationState::nominal(&intr);
        let pose = Pose::new(WorldPoint::new(x, y, z), yaw);
        let all = [(-150.0, -100.0), (150.0, -100.0), (0.0, 150.0), (90.0, 60.0)];
        let estimates: Vec<_> = (2..=4)
            .map(|n| {
                let t = ceiling(&all[..n]);
                solve_pose(&frame_for(&t, &pose, &intr), &t, &intr, &calib).unwrap()
            })
            .collect();
        for e in &estimates {
            prop_assert!((e.position.to_vector() - estimates[0].position.to_vector()).norm() < 1e-9);
            prop_assert!(angle_difference(e.yaw, estimates[0].yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn dispersion_offset_moves_output_exactly(
        x in -300.0..300.0f64, y in -200.0..200.0f64, yaw in -3.0..3.0f64,
        dx in -30.0..30.0f64, dy in -30.0..30.0f64,
    ) {
        let intr = CameraIntrinsics::default();
        let nominal = CalibrationState::nominal(&intr);
        let mut shifted = nominal;
        shifted.dispersion_offset = [dx, dy];
        let t = ceiling(&[(-150.0, 0.0), (150.0, 0.0)]);
        let f = frame_for(&t, &Pose::new(WorldPoint::new(x, y, 0.0), yaw), &intr);
        let a = solve_pose(&f, &t, &intr, &nominal).unwrap();
        let b = solve_pose(&f, &t, &intr, &shifted).unwrap();
        prop_assert!((b.position.x - (a.position.x - dx)).abs() < 1e-9);
        prop_assert!((b.position.y - (a.position.y - dy)).abs() < 1e-9);
        prop_assert_eq!(a.position.z, b.position.z);
    }

    #[test]
    fn arbitrary_frames_never_yield_non_finite_poses(
        pixels in prop::collection::vec((-50.0..850.0f64, -50.0..650.0f64), 0..5),
        dup in any::<bool>(),
    ) {
        let intr = CameraIntrinsics::default();
        let calib = CalibrationState::nominal(&intr);
        let t = ceiling(&[(-150.0, -100.0), (150.0, -100.0), (0.0, 150.0), (90.0, 60.0), (-90.0, 60.0)]);
        let mut detections: Vec<Detection> = pixels
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| Detection { uid: format!("L{i}"), centroid: PixelPoint::new(u, v) })
            .collect();
        if dup && detections.len() >= 2 {
            detections[1].centroid = detections[0].centroid;
        }
        match solve_pose(&Frame::new(detections, 0.0), &t, &intr, &calib) {
            Ok(e) => prop_assert!(e.position.is_finite() && e.yaw.is_finite()),
            Err(e) => prop_assert!(!e.kind().is_empty()),
        }
    }

    #[test]
    fn fit_circle_is_rigidly_equivariant(
        seed in 0u64..1000, angle in -3.0..3.0f64, tx in -500.0..500.0f64, ty in -500.0..500.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector2<f64>> = (0..12)
            .map(|k| {
                let a = (k as f64 * 30.0).to_radians();
                Vector2::new(400.0, 300.0) + Vector2::new(a.cos(), a.sin()) * (100.0 + rng.random_range(-1.0..1.0))
            })
            .collect();
        let rot = Rotation2::new(angle);
        let shift = Vector2::new(tx, ty);
        let moved: Vec<_> = pts.iter().map(|p| rot * p + shift).collect();
        let a = fit_circle(&pts).unwrap();
        let b = fit_circle(&moved).unwrap();
        prop_assert!((rot * a.circle.center + shift - b.circle.center).norm() < 1e-9);
        prop_assert!((a.circle.radius - b.circle.radius).abs() < 1e-9);
    }

    #[test]
    fn summary_ignores_order(values in prop::collection::vec(0.0..100.0f64, 1..60), seed in 0u64..100) {
        let errors: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
        let mut shuffled = errors.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = summarize(&errors).unwrap();
        prop_assert_eq!(&a, &summarize(&shuffled).unwrap());
        prop_assert_eq!(a.cdf_at(a.max_mm), 1.0);
        prop_assert!(a.cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn fit_line_is_rigidly_equivariant(
        seed in 0u64..1000, angle in -3.0..3.0f64, tx in -500.0..500.0f64, ty in -500.0..500.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector2<f64>> = (0..40)
            .map(|i| Vector2::new(i as f64 * 10.0 - 200.0, 0.3 * i as f64 + rng.random_range(-2.0..2.0)))
            .collect();
        let rot = Rotation2::new(angle);
        let moved: Vec<_> = pts.iter().map(|p| rot * p + Vector2::new(tx, ty)).collect();
        let mut reversed = pts.clone();
        reversed.reverse();
        let a = fit_line(&pts).unwrap();
        let b = fit_line(&moved).unwrap();
        let r = fit_line(&reversed).unwrap();
        prop_assert!((rot * a.direction).dot(&b.direction).abs() > 1.0 - 1e-12);
        prop_assert!((a.rms_residual_mm - b.rms_residual_mm).abs() < 1e-9);
        prop_assert!((a.direction - r.direction).norm() < 1e-12);
        prop_assert!((a.point - r.point).norm() < 1e-9);
    }
}

#[test]
fn nominal_center_calibration_is_bit_identical() {
    let intr = CameraIntrinsics::default();
    let nominal = CalibrationState::nominal(&intr);
    let reloaded = calibration_from_str(&calibration_to_string(&nominal).unwrap(), "mem").unwrap();
    let t = ceiling(&[(-150.0, -100.0), (150.0, -100.0), (0.0, 150.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let pose = Pose::new(
            WorldPoint::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(-200.0..200.0),
                0.0,
            ),
            rng.random_range(-3.0..3.0),
        );
        let f = frame_for(&t, &pose, &intr);
        assert_eq!(
            solve_pose(&f, &t, &intr, &nominal).unwrap(),
            solve_pose(&f, &t, &intr, &reloaded).unwrap()
        );
    }
}

#[test]
fn dispersion_calibration_is_idempotent() {
    let s = Scenario::preset("static-2led").unwrap();
    let intr = *s.intrinsics();
    let err = ErrorModel {
        constant_plan_shift_mm: [11.0, -6.5],
        ..ErrorModel::zero(&intr, 5)
    };
    let sim = Simulator::new(s.scene.clone(), err).unwrap();
    let nominal = CalibrationState::nominal(&intr);
    let reference = Vector2::zeros();
    let collect = |c: &CalibrationState| {
        dispersion_samples(&sim.run_dispersion(reference, 0.0, 50, YawPolicy::Uniform, c))
    };
    let first = calibrate_dispersion(&nominal, &collect(&nominal), reference, &intr).unwrap();
    let second =
        calibrate_dispersion(&first.state, &collect(&first.state), reference, &intr).unwrap();
    assert!(
        second.measured_offset.norm() < 1e-9,
        "{}",
        second.measured_offset
    );
    assert!((second.state.dispersion_offset[0] - 11.0).abs() < 1e-9);
    assert!((second.state.dispersion_offset[1] + 6.5).abs() < 1e-9);
}

#[test]
fn plan_shift_moves_mean_but_not_spread() {
    let s = Scenario::preset("static-2led").unwrap();
    let intr = *s.intrinsics();
    let nominal = CalibrationState::nominal(&intr);
    let noisy = ErrorModel {
        pixel_noise_sigma_px: 0.5,
        ..ErrorModel::zero(&intr, 12)
    };
    let shifted = ErrorModel {
        constant_plan_shift_mm: [8.0, 3.0],
        ..noisy
    };
    let spread = |err: ErrorModel| {
        let sim = Simulator::new(s.scene.clone(), err).unwrap();
        let pts: Vec<_> = dispersion_samples(&sim.run_dispersion(
            Vector2::zeros(),
            0.0,
            80,
            YawPolicy::Uniform,
            &nominal,
        ))
        .iter()
        .map(|d| d.plan_estimate)
        .collect();
        let mean = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
        (mean, min_enclosing_circle(&pts).unwrap().radius)
    };
    let (m0, r0) = spread(noisy);
    let (m1, r1) = spread(shifted);
    assert!((r0 - r1).abs() < 0.02 * r0, "{r0} vs {r1}");
    assert!(
        (m1 - m0 - Vector2::new(8.0, 3.0)).norm() < 0.1,
        "{}",
        m1 - m0
    );
}

#[test]
fn trial_records_do_not_depend_on_thread_count() {
    let s = Scenario::preset("static-3led").unwrap().with_seed(31);
    let run = |threads| {
        with_threads(threads, || {
            let sim = s.simulator().unwrap();
            s.run_experiment(&sim, &s.nominal_calibration())
                .unwrap()
                .records
        })
        .unwrap()
    };
    assert_eq!(run(1), run(5));
}

#[test]
fn zero_error_scenarios_are_exact() {
    for preset in ["static-2led", "static-3led", "dynamic-x", "dynamic-y"] {
        let mut s = Scenario::preset(preset).unwrap();
        s.error_model = ErrorModel::zero(s.intrinsics(), s.seed());
        let sim = s.simulator().unwrap();
        let out = s.run_experiment(&sim, &s.nominal_calibration()).unwrap();
        assert_eq!(out.summary.n_failed, 0);
        assert!(
            out.summary.max_mm < 1e-9,
            "{preset}: {}",
            out.summary.max_mm
        );
    }
}

#[test]
fn report_round_trips_through_csv() {
    let s = Scenario::preset("static-2led").unwrap();
    let sim = s.simulator().unwrap();
    let out = s.run_experiment(&sim, &s.nominal_calibration()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write_report(&out, dir.path()).unwrap();
    let rows = read_trials_csv(dir.path().join("trials.csv")).unwrap();
    assert_eq!(rows.len(), out.records.len());
    for (row, (rec, err)) in rows.iter().zip(out.records.iter().zip(&out.errors)) {
        let est = rec.estimate.as_ref().unwrap();
        assert_eq!(row.trial, rec.index);
        assert_eq!(row.true_pose[0], rec.true_pose.position.x);
        assert_eq!(
            row.estimate.unwrap(),
            [est.position.x, est.position.y, est.position.z, est.yaw]
        );
        assert_eq!(row.err_mm, *err);
        assert_eq!(row.status, "ok");
    }
}

#[test]
fn bad_anchor_files_report_lines() {
    let err =
        AnchorTable::from_csv_str("uid,x_mm,y_mm,z_mm\nA,0,0,1600\nB,1,x,1600\n", "t.csv", 1.0)
            .unwrap_err();
    assert!(
        matches!(err, VlpError::Parse { line: Some(3), .. }),
        "{err:?}"
    );
}
