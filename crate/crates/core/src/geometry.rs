//! Circle and line fitting plus the residual and length measures built on them.

use nalgebra::{Matrix3, SymmetricEigen, Vector2};

use crate::chaining::Point;
use crate::error::{Error, Result};

/// Radius beyond which a circle fit is reported as degenerate (straight).
pub const RADIUS_CAP: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: Point,
    /// Infinite when `degenerate`.
    pub radius: f64,
    pub rms_residual: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub point: Point,
    /// Unit direction, sign canonicalized so its first nonzero component is positive.
    pub direction: Vector2<f64>,
    pub max_deviation: f64,
    pub rms_deviation: f64,
}

impl LineFit {
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.direction.y, self.direction.x)
    }

    /// Signed orthogonal distance of `p` from the line.
    pub fn signed_distance(&self, p: &Point) -> f64 {
        (p - self.point).dot(&self.normal())
    }
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

fn all_coincident(points: &[Point]) -> bool {
    points.iter().all(|p| *p == points[0])
}

/// Taubin algebraic circle fit.
///
/// Works on centroid-centred coordinates and takes the eigenvector of the
/// smallest eigenvalue of the 3x3 moment matrix of `[(z - mean z) / (2 sqrt(mean z)), x, y]`
/// with `z = x^2 + y^2`; this is the Taubin normalization reduced to a
/// symmetric eigenproblem. Collinear inputs yield a vanishing quadratic
/// coefficient and are flagged degenerate.
pub fn fit_circle_taubin(points: &[Point]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    if all_coincident(points) {
        return Err(Error::CoincidentPoints);
    }
    let c = centroid(points);
    let n = points.len() as f64;
    let z_mean = points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n;
    let scale = 2.0 * z_mean.sqrt();

    let mut m = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - c;
        let row = nalgebra::Vector3::new((d.norm_squared() - z_mean) / scale, d.x, d.y);
        m += row * row.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three eigenvalues");
    let v = eig.eigenvectors.column(imin);

    // Conic a z + b x + c y + d = 0 in centred coordinates.
    let a = v[0] / scale;
    let (b, cc) = (v[1], v[2]);
    let d = -z_mean * a;

    let degenerate_fit = || {
        let line = fit_line_tls(points).expect("points are not all coincident");
        CircleFit {
            center: c,
            radius: f64::INFINITY,
            rms_residual: line.rms_deviation,
            degenerate: true,
        }
    };

    if a == 0.0 || !a.is_finite() {
        return Ok(degenerate_fit());
    }
    let cx = -b / (2.0 * a);
    let cy = -cc / (2.0 * a);
    let radius = ((b * b + cc * cc - 4.0 * a * d).sqrt()) / (2.0 * a.abs());
    if !radius.is_finite() || radius > RADIUS_CAP {
        return Ok(degenerate_fit());
    }
    let center = Point::new(c.x + cx, c.y + cy);
    let rms_residual = rms_radial(points, &center, radius);
    Ok(CircleFit {
        center,
        radius,
        rms_residual,
        degenerate: false,
    })
}

fn rms_radial(points: &[Point], center: &Point, radius: f64) -> f64 {
    let ss: f64 = points
        .iter()
        .map(|p| {
            let r = (p - center).norm() - radius;
            r * r
        })
        .sum();
    (ss / points.len() as f64).sqrt()
}

/// Largest `| |p - center| - radius |` over the points.
pub fn max_residual_to_circle(points: &[Point], circle: &CircleFit) -> Result<f64> {
    if circle.degenerate {
        return Err(Error::DegenerateCircle);
    }
    Ok(points
        .iter()
        .map(|p| ((p - circle.center).norm() - circle.radius).abs())
        .fold(0.0, f64::max))
}

/// RMS of `| |p - center| - radius |` over the points.
pub fn residual_to_circle(points: &[Point], circle: &CircleFit) -> Result<f64> {
    if circle.degenerate {
        return Err(Error::DegenerateCircle);
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    Ok(rms_radial(points, &circle.center, circle.radius))
}

/// Total least squares line through the centroid along the principal axis.
pub fn fit_line_tls(points: &[Point]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    if all_coincident(points) {
        return Err(Error::CoincidentPoints);
    }
    let c = centroid(points);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut direction = Vector2::new(angle.cos(), angle.sin());
    if direction.x < 0.0 || (direction.x == 0.0 && direction.y < 0.0) {
        direction = -direction;
    }
    let normal = Vector2::new(-direction.y, direction.x);
    let (mut max, mut ss) = (0.0f64, 0.0);
    for p in points {
        let dist = (p - c).dot(&normal).abs();
        max = max.max(dist);
        ss += dist * dist;
    }
    Ok(LineFit {
        point: c,
        direction,
        max_deviation: max,
        rms_deviation: (ss / points.len() as f64).sqrt(),
    })
}

/// Sum of consecutive Euclidean distances.
pub fn arc_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to the nearest point of a polyline.
pub fn point_polyline_distance(p: &Point, polyline: &[Point]) -> f64 {
    match polyline.len() {
        0 => f64::INFINITY,
        1 => (p - polyline[0]).norm(),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arc(center: (f64, f64), r: f64, span_px: f64, n: usize) -> Vec<Point> {
        let half = 0.5 * span_px / r;
        (0..n)
            .map(|i| {
                let t = -half + 2.0 * half * i as f64 / (n - 1) as f64;
                Point::new(center.0 + r * t.cos(), center.1 + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn exact_circle_four_points() {
        let pts = [(10.0, 0.0), (0.0, 10.0), (-10.0, 0.0), (0.0, -10.0)].map(|(x, y)| Point::new(x, y));
        let fit = fit_circle_taubin(&pts).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.center.coords.norm() < 1e-9);
        assert!((fit.radius - 10.0).abs() < 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn near_straight_arc() {
        let pts = arc((-9_900.0, 300.0), 10_000.0, 100.0, 50);
        let fit = fit_circle_taubin(&pts).unwrap();
        assert!(!fit.degenerate);
        assert!((fit.radius - 10_000.0).abs() / 10_000.0 < 0.01, "radius {}", fit.radius);
        assert!(fit.rms_residual < 1e-6, "residual {}", fit.rms_residual);
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<_> = (0..10).map(|i| Point::new(3.0 + 2.0 * i as f64, 7.0 - i as f64)).collect();
        let fit = fit_circle_taubin(&pts).unwrap();
        assert!(fit.degenerate);
        assert!(!fit.rms_residual.is_nan() && !fit.center.x.is_nan());
    }

    #[test]
    fn circle_fit_errors() {
        assert!(matches!(
            fit_circle_taubin(&[Point::new(0.0, 0.0), Point::new(1.0, 0.0)]),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_circle_taubin(&[Point::new(1.0, 1.0); 5]),
            Err(Error::CoincidentPoints)
        ));
    }

    #[test]
    fn tls_diagonal() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)].map(|(x, y)| Point::new(x, y));
        let fit = fit_line_tls(&pts).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((fit.direction - Vector2::new(s, s)).norm() < 1e-12);
        assert!(fit.max_deviation < 1e-12);
    }

    #[test]
    fn tls_hand_solution() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (1.0, 1.0)].map(|(x, y)| Point::new(x, y));
        let fit = fit_line_tls(&pts).unwrap();
        assert!((fit.point.y - 0.25).abs() < 1e-12);
        assert!((fit.direction - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((fit.max_deviation - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tls_reflection_symmetry() {
        let pts: Vec<_> = [(0.0, 0.3), (2.0, 1.1), (4.0, 1.8), (7.0, 3.9), (9.0, 4.2)]
            .iter()
            .map(|&(x, y)| Point::new(x, y))
            .collect();
        let fit = fit_line_tls(&pts).unwrap();
        let n = fit.normal();
        let mut both = pts.clone();
        both.extend(pts.iter().map(|p| p - n * (2.0 * fit.signed_distance(p))));
        let fit2 = fit_line_tls(&both).unwrap();
        assert!((fit2.direction - fit.direction).norm() < 1e-9);
        assert!(fit2.signed_distance(&fit.point).abs() < 1e-9);
    }

    #[test]
    fn tls_is_bit_reproducible_and_canonical() {
        let pts: Vec<_> = (0..20).map(|i| Point::new(5.0 - 0.01 * i as f64, i as f64)).collect();
        let a = fit_line_tls(&pts).unwrap();
        let b = fit_line_tls(&pts).unwrap();
        assert_eq!(a, b);
        assert!(a.direction.x > 0.0 || (a.direction.x == 0.0 && a.direction.y > 0.0));
        assert!((a.direction.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn circle_residual_cases() {
        let circle = CircleFit {
            center: Point::new(0.0, 0.0),
            radius: 10.0,
            rms_residual: 0.0,
            degenerate: false,
        };
        let on: Vec<_> = (0..8)
            .map(|i| {
                let t = i as f64 * 0.7;
                Point::new(10.0 * t.cos(), 10.0 * t.sin())
            })
            .collect();
        assert!(residual_to_circle(&on, &circle).unwrap() < 1e-12);
        assert_eq!(residual_to_circle(&[Point::new(12.0, 0.0)], &circle).unwrap(), 2.0);
        let mixed: Vec<_> = (0..6)
            .map(|i| {
                let r = if i % 2 == 0 { 11.0 } else { 9.0 };
                let t = i as f64;
                Point::new(r * t.cos(), r * t.sin())
            })
            .collect();
        assert!((residual_to_circle(&mixed, &circle).unwrap() - 1.0).abs() < 1e-12);
        let degenerate = CircleFit {
            degenerate: true,
            ..circle
        };
        assert!(residual_to_circle(&on, &degenerate).is_err());
    }

    #[test]
    fn arc_length_cases() {
        assert_eq!(arc_length(&[Point::new(0.0, 0.0), Point::new(3.0, 4.0)]), 5.0);
        let square = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)].map(|(x, y)| Point::new(x, y));
        assert_eq!(arc_length(&square), 40.0);
    }

    #[test]
    fn taubin_optimal_on_exact_circle() {
        let pts = arc((40.0, -15.0), 60.0, 150.0, 40);
        let fit = fit_circle_taubin(&pts).unwrap();
        let base = residual_to_circle(&pts, &fit).unwrap();
        for (dx, dy, dr) in [(0.1, 0.0, 0.0), (0.0, -0.1, 0.0), (0.0, 0.0, 0.05), (0.03, 0.02, -0.01)] {
            let perturbed = CircleFit {
                center: Point::new(fit.center.x + dx, fit.center.y + dy),
                radius: fit.radius + dr,
                ..fit
            };
            assert!(base <= residual_to_circle(&pts, &perturbed).unwrap());
        }
    }

    proptest! {
        #[test]
        fn taubin_similarity_equivariance(
            tx in -500.0..500.0f64,
            ty in -500.0..500.0f64,
            angle in 0.0..std::f64::consts::TAU,
            scale in 0.2..5.0f64,
            r in 20.0..400.0f64,
        ) {
            // Noisy-ish but deterministic points near a circle.
            let pts: Vec<Point> = (0..25)
                .map(|i| {
                    let t = 0.1 * i as f64;
                    let rr = r + 0.3 * (i as f64 * 1.7).sin();
                    Point::new(rr * t.cos(), rr * t.sin())
                })
                .collect();
            let (s, c) = angle.sin_cos();
            let map = |p: &Point| Point::new(scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty);
            let moved: Vec<Point> = pts.iter().map(map).collect();
            let a = fit_circle_taubin(&pts).unwrap();
            let b = fit_circle_taubin(&moved).unwrap();
            let expected_center = map(&a.center);
            prop_assert!((b.radius - scale * a.radius).abs() <= 1e-9 * scale * a.radius);
            prop_assert!((b.center - expected_center).norm() <= 1e-9 * (scale * a.radius + expected_center.coords.norm()));
        }
    }
}
