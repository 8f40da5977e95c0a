//! Circle primitives: algebraic least-squares fit and minimum enclosing circle.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlpError};

/// Normal-matrix condition number above which a fit is rejected as collinear.
pub const FIT_CIRCLE_MAX_CONDITION: f64 = 1e12;

const MEC_SHUFFLE_SEED: u64 = 0x5eed_c1c1e;
const MEC_EPSILON: f64 = 1.0 + 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle2D {
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl Circle2D {
    pub fn new(center: Vector2<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (p - self.center).norm() <= self.radius * MEC_EPSILON
    }

    pub fn contains_within(&self, p: &Vector2<f64>, tol: f64) -> bool {
        (p - self.center).norm() <= self.radius + tol
    }

    /// Circle with `a` and `b` as a diameter.
    pub fn from_diameter(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        let center = (a + b) / 2.0;
        let radius = (a - center).norm().max((b - center).norm());
        Self { center, radius }
    }

    /// Circumcircle of a triangle, `None` when the points are collinear.
    pub fn circumscribe(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Option<Self> {
        // work relative to the bounding-box center for precision
        let ox = (a.x.min(b.x).min(c.x) + a.x.max(b.x).max(c.x)) / 2.0;
        let oy = (a.y.min(b.y).min(c.y) + a.y.max(b.y).max(c.y)) / 2.0;
        let (ax, ay) = (a.x - ox, a.y - oy);
        let (bx, by) = (b.x - ox, b.y - oy);
        let (cx, cy) = (c.x - ox, c.y - oy);
        let d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0;
        if d == 0.0 {
            return None;
        }
        let a2 = ax * ax + ay * ay;
        let b2 = bx * bx + by * by;
        let c2 = cx * cx + cy * cy;
        let x = ox + (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
        let y = oy + (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
        let center = Vector2::new(x, y);
        let radius = (a - center)
            .norm()
            .max((b - center).norm())
            .max((c - center).norm());
        Some(Self { center, radius })
    }
}

/// Result of [`fit_circle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub circle: Circle2D,
    /// RMS of `|p − c| − r` over the input points.
    pub rms_residual: f64,
}

/// Algebraic (Kåsa) least-squares circle fit.
///
/// Minimizes `Σ (|p − c|² − r²)²` through the linear model
/// `x² + y² + D·x + E·y + F = 0`. Points are centered and scaled before the
/// solve so the condition guard does not depend on units.
pub fn fit_circle(points: &[Vector2<f64>]) -> Result<CircleFit> {
    fit_circle_with_condition_limit(points, FIT_CIRCLE_MAX_CONDITION)
}

pub fn fit_circle_with_condition_limit(
    points: &[Vector2<f64>],
    max_condition: f64,
) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(VlpError::InvalidInput(format!(
            "circle fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(VlpError::InvalidInput(
            "circle fit input is not finite".into(),
        ));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector2<f64>>() / n;
    let scale = (points
        .iter()
        .map(|p| (p - mean).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale > 0.0) {
        return Err(VlpError::DegenerateGeometry(
            "circle fit points coincide".into(),
        ));
    }

    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for p in points {
        let q = (p - mean) / scale;
        let row = Vector3::new(q.x, q.y, 1.0);
        normal += row * row.transpose();
        rhs -= row * q.norm_squared();
    }

    let eig = SymmetricEigen::new(normal).eigenvalues;
    let (lo, hi) = (eig.min().abs(), eig.max().abs());
    if !(lo > 0.0) || hi / lo > max_condition {
        return Err(VlpError::DegenerateGeometry(format!(
            "circle fit points are collinear (condition {:.3e})",
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        )));
    }
    let sol = normal.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| {
        VlpError::DegenerateGeometry("circle fit normal matrix is singular".into())
    })?;

    let (d, e, f) = (sol.x, sol.y, sol.z);
    let center_q = Vector2::new(-d / 2.0, -e / 2.0);
    let r2 = center_q.norm_squared() - f;
    if !(r2 >= 0.0) {
        return Err(VlpError::DegenerateGeometry(
            "circle fit produced an imaginary radius".into(),
        ));
    }
    let circle = Circle2D::new(mean + center_q * scale, r2.sqrt() * scale);
    let rms_residual = (points
        .iter()
        .map(|p| ((p - circle.center).norm() - circle.radius).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(CircleFit {
        circle,
        rms_residual,
    })
}

/// Smallest circle containing every point.
///
/// Randomized incremental construction (Welzl) in expected linear time. The
/// shuffle uses a fixed seed so the function is deterministic.
pub fn min_enclosing_circle(points: &[Vector2<f64>]) -> Result<Circle2D> {
    if points.is_empty() {
        return Err(VlpError::EmptyInput(
            "minimum enclosing circle of no points".into(),
        ));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(VlpError::InvalidInput(
            "enclosing circle input is not finite".into(),
        ));
    }
    let mut shuffled = points.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(MEC_SHUFFLE_SEED));

    let mut c = Circle2D::new(shuffled[0], 0.0);
    for i in 1..shuffled.len() {
        let p = shuffled[i];
        if !c.contains(&p) {
            c = circle_with_one_point(&shuffled[..i], p);
        }
    }
    Ok(c)
}

// p is on the boundary
fn circle_with_one_point(points: &[Vector2<f64>], p: Vector2<f64>) -> Circle2D {
    let mut c = Circle2D::new(p, 0.0);
    for (i, &q) in points.iter().enumerate() {
        if !c.contains(&q) {
            c = if c.radius == 0.0 {
                Circle2D::from_diameter(p, q)
            } else {
                circle_with_two_points(&points[..i], p, q)
            };
        }
    }
    c
}

// p and q are on the boundary
fn circle_with_two_points(points: &[Vector2<f64>], p: Vector2<f64>, q: Vector2<f64>) -> Circle2D {
    let diameter = Circle2D::from_diameter(p, q);
    let pq = q - p;
    let cross = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;

    let mut left: Option<Circle2D> = None;
    let mut right: Option<Circle2D> = None;
    for &r in points {
        if diameter.contains(&r) {
            continue;
        }
        let side = cross(pq, r - p);
        let Some(c) = Circle2D::circumscribe(p, q, r) else {
            continue;
        };
        if side > 0.0 {
            if left.is_none_or(|l| cross(pq, c.center - p) > cross(pq, l.center - p)) {
                left = Some(c);
            }
        } else if side < 0.0
            && right.is_none_or(|rc| cross(pq, c.center - p) < cross(pq, rc.center - p))
        {
            right = Some(c);
        }
    }
    match (left, right) {
        (None, None) => diameter,
        (Some(l), None) => l,
        (None, Some(r)) => r,
        (Some(l), Some(r)) => {
            if l.radius <= r.radius {
                l
            } else {
                r
            }
        }
    }
}

/// Angular span of points around `center`: 2π minus the largest gap.
pub fn angular_coverage(points: &[Vector2<f64>], center: Vector2<f64>) -> f64 {
    use std::f64::consts::TAU;
    if points.len() < 2 {
        return 0.0;
    }
    let mut angles: Vec<f64> = points
        .iter()
        .map(|p| (p.y - center.y).atan2(p.x - center.x).rem_euclid(TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    let mut max_gap = angles[0] + TAU - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    TAU - max_gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    fn on_circle(center: Vector2<f64>, r: f64, angles: &[f64]) -> Vec<Vector2<f64>> {
        angles
            .iter()
            .map(|a| center + v(a.cos(), a.sin()) * r)
            .collect()
    }

    #[test]
    fn fit_three_points() {
        let fit = fit_circle(&[v(1.0, 0.0), v(0.0, 1.0), v(-1.0, 0.0)]).unwrap();
        assert_close!(fit.circle.center.x, 0.0, 1e-15);
        assert_close!(fit.circle.center.y, 0.0, 1e-15);
        assert_close!(fit.circle.radius, 1.0, 1e-15);
    }

    #[test]
    fn fit_twelve_exact_points() {
        let angles: Vec<f64> = (0..12)
            .map(|k| (k as f64 * 30.0 + (k % 3) as f64 * 2.0).to_radians())
            .collect();
        let c = v(403.2, 297.5);
        let fit = fit_circle(&on_circle(c, 150.0, &angles)).unwrap();
        assert!((fit.circle.center - c).norm() < 1e-9);
        assert_close!(fit.circle.radius, 150.0, 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn fit_rejects_collinear_and_coincident() {
        let line = [v(0.0, 0.0), v(1.0, 1.0), v(2.0, 2.0), v(5.0, 5.0)];
        assert!(matches!(
            fit_circle(&line),
            Err(VlpError::DegenerateGeometry(_))
        ));
        let same = [v(3.0, 3.0); 4];
        assert!(matches!(
            fit_circle(&same),
            Err(VlpError::DegenerateGeometry(_))
        ));
        assert!(matches!(
            fit_circle(&[v(0.0, 0.0), v(1.0, 0.0)]),
            Err(VlpError::InvalidInput(_))
        ));
    }

    /// Brute-force oracle: grid search over centers minimizing the variance of
    /// the radial distances.
    fn grid_search_center(
        points: &[Vector2<f64>],
        around: Vector2<f64>,
        half_width: f64,
        step: f64,
    ) -> Vector2<f64> {
        let n = (half_width / step).round() as i64;
        let mut best = (f64::INFINITY, around);
        for i in -n..=n {
            for j in -n..=n {
                let c = around + v(i as f64 * step, j as f64 * step);
                let d: Vec<f64> = points.iter().map(|p| (p - c).norm()).collect();
                let m = d.iter().sum::<f64>() / d.len() as f64;
                let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>();
                if var < best.0 {
                    best = (var, c);
                }
            }
        }
        best.1
    }

    #[test]
    fn fit_noisy_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let c = v(403.2, 297.5);
        let pts: Vec<Vector2<f64>> = (0..12)
            .map(|k| {
                let a = (k as f64 * 30.0 + rng.random_range(-5.0..5.0)).to_radians();
                let r = 150.0 + noise.sample(&mut rng);
                c + v(a.cos(), a.sin()) * r
            })
            .collect();
        let fit = fit_circle(&pts).unwrap();
        let oracle = grid_search_center(&pts, c, 1.0, 0.01);
        assert!(
            (fit.circle.center - oracle).norm() <= 0.01,
            "{:?} vs {:?}",
            fit.circle.center,
            oracle
        );
    }

    /// Exhaustive oracle over all diameter circles and circumcircles.
    fn exhaustive_mec(points: &[Vector2<f64>]) -> Circle2D {
        if points.len() == 1 {
            return Circle2D::new(points[0], 0.0);
        }
        let encloses = |c: &Circle2D| points.iter().all(|p| c.contains_within(p, 1e-9));
        let mut best: Option<Circle2D> = None;
        let mut consider = |c: Circle2D| {
            if encloses(&c) && best.is_none_or(|b| c.radius < b.radius) {
                best = Some(c);
            }
        };
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                consider(Circle2D::from_diameter(points[i], points[j]));
                for k in j + 1..points.len() {
                    if let Some(c) = Circle2D::circumscribe(points[i], points[j], points[k]) {
                        consider(c);
                    }
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn mec_small_cases() {
        let one = min_enclosing_circle(&[v(2.0, -1.0)]).unwrap();
        assert_eq!(one, Circle2D::new(v(2.0, -1.0), 0.0));
        let two = min_enclosing_circle(&[v(0.0, 0.0), v(4.0, 2.0)]).unwrap();
        assert_close!(two.center.x, 2.0, 1e-15);
        assert_close!(two.center.y, 1.0, 1e-15);
        assert_close!(two.radius, 5.0_f64.sqrt(), 1e-15);
        assert!(matches!(
            min_enclosing_circle(&[]),
            Err(VlpError::EmptyInput(_))
        ));
    }

    #[test]
    fn mec_matches_exhaustive_on_twenty_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..20)
            .map(|_| v(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let fast = min_enclosing_circle(&pts).unwrap();
        let slow = exhaustive_mec(&pts);
        assert!((fast.center - slow.center).norm() < 1e-9);
        assert_close!(fast.radius, slow.radius, 1e-9);
    }

    #[test]
    fn coverage_of_full_and_half_sweeps() {
        let c = v(0.0, 0.0);
        let full: Vec<f64> = (0..12).map(|k| (k as f64 * 30.0).to_radians()).collect();
        assert_close!(
            angular_coverage(&on_circle(c, 1.0, &full), c),
            (330.0_f64).to_radians(),
            1e-12
        );
        let half: Vec<f64> = (0..5).map(|k| (k as f64 * 30.0).to_radians()).collect();
        assert_close!(
            angular_coverage(&on_circle(c, 1.0, &half), c),
            (120.0_f64).to_radians(),
            1e-12
        );
    }

    proptest! {
        #[test]
        fn fit_exact_on_any_circle(cx in -1e3..1e3f64, cy in -1e3..1e3f64, r in 1.0..500.0f64,
                                   start in 0.0..6.3f64, n in 3usize..16) {
            let angles: Vec<f64> = (0..n).map(|k| start + k as f64 * 6.0 / n as f64).collect();
            let c = v(cx, cy);
            let fit = fit_circle(&on_circle(c, r, &angles)).unwrap();
            prop_assert!((fit.circle.center - c).norm() <= 1e-9 * r.max(c.norm()));
            prop_assert!((fit.circle.radius - r).abs() <= 1e-9 * r);
        }

        #[test]
        fn fit_is_rigid_equivariant(theta in -3.2..3.2f64, tx in -500.0..500.0f64, ty in -500.0..500.0f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..12).map(|k| {
                let a = k as f64 * 0.5;
                v(100.0 + 40.0 * a.cos(), 50.0 + 40.0 * a.sin()) + v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }).collect();
            let rot = nalgebra::Rotation2::new(theta);
            let t = v(tx, ty);
            let moved: Vec<_> = pts.iter().map(|p| rot * p + t).collect();
            let a = fit_circle(&pts).unwrap().circle;
            let b = fit_circle(&moved).unwrap().circle;
            prop_assert!(((rot * a.center + t) - b.center).norm() < 1e-9);
            prop_assert!((a.radius - b.radius).abs() < 1e-9);
        }

        #[test]
        fn mec_contains_and_matches_oracle(seed in 0u64..10_000, n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..n).map(|_| v(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect();
            let c = min_enclosing_circle(&pts).unwrap();
            prop_assert!(pts.iter().all(|p| c.contains_within(p, 1e-9)));
            let on_boundary = pts.iter().filter(|p| ((*p - c.center).norm() - c.radius).abs() < 1e-9).count();
            prop_assert!(n == 1 || on_boundary >= 2);
            let o = exhaustive_mec(&pts);
            prop_assert!((c.radius - o.radius).abs() < 1e-9);
            prop_assert!((c.center - o.center).norm() < 1e-9);
        }
    }
}
