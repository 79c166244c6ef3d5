//! Synthetic scenes with known geometry and distortion, for tests, benchmarks
//! and demos.
//!
//! The forward (undistorted to distorted) map is solved here by Newton
//! iteration on its own copy of the Brown-Conrady polynomial, so generated
//! data does not route through the code it is used to check.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::chaining::{EdgeSegment, OrientationClass, Point};
use crate::distortion::DistortionParams;
use crate::imaging::GrayImage;

fn undistort_raw(p: Vector2<f64>, d: &DistortionParams) -> Vector2<f64> {
    let s = 0.5 * f64::from(d.image_width).hypot(f64::from(d.image_height));
    let (x, y) = ((p.x - d.xc) / s, (p.y - d.yc) / s);
    let r2 = x * x + y * y;
    let radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
    let dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
    let dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
    Vector2::new(d.xc + s * (x * radial + dx), d.yc + s * (y * radial + dy))
}

/// Where an undistorted point appears in the distorted image.
///
/// Points outside the range of the undistortion map have no preimage; the
/// returned point is then the last Newton iterate.
pub fn distort_point(undistorted: &Point, d: &DistortionParams) -> Point {
    let target = undistorted.coords;
    let mut p = target;
    let h = 1e-4;
    for _ in 0..100 {
        let f = undistort_raw(p, d) - target;
        if f.norm() < 1e-12 {
            break;
        }
        let jx = (undistort_raw(p + Vector2::new(h, 0.0), d) - undistort_raw(p - Vector2::new(h, 0.0), d)) / (2.0 * h);
        let jy = (undistort_raw(p + Vector2::new(0.0, h), d) - undistort_raw(p - Vector2::new(0.0, h), d)) / (2.0 * h);
        let jac = Matrix2::from_columns(&[jx, jy]);
        match jac.try_inverse() {
            Some(inv) => p -= inv * f,
            None => break,
        }
    }
    Point::from(p)
}

/// A straight line segment in undistorted pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLine {
    pub a: Point,
    pub b: Point,
}

impl SceneLine {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        Self {
            a: Point::new(a.0, a.1),
            b: Point::new(b.0, b.1),
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Samples `line` every `spacing` px (undistorted) and maps the samples into
/// the distorted image.
pub fn distorted_line(line: &SceneLine, d: &DistortionParams, spacing: f64, class: OrientationClass) -> EdgeSegment {
    let n = (line.length() / spacing).ceil().max(1.0) as usize;
    let points = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            distort_point(&(line.a + (line.b - line.a) * t), d)
        })
        .collect();
    EdgeSegment::new(points, class).expect("at least two samples")
}

/// Axis-aligned rectangle in undistorted coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl SceneRect {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    /// Top, bottom, left, right sides with their edge class.
    pub fn sides(&self) -> [(SceneLine, OrientationClass); 4] {
        let (x0, y0, x1, y1) = (self.x0, self.y0, self.x1, self.y1);
        [
            (SceneLine::new((x0, y0), (x1, y0)), OrientationClass::Horizontal),
            (SceneLine::new((x0, y1), (x1, y1)), OrientationClass::Horizontal),
            (SceneLine::new((x0, y0), (x0, y1)), OrientationClass::Vertical),
            (SceneLine::new((x1, y0), (x1, y1)), OrientationClass::Vertical),
        ]
    }
}

/// Bright rectangles on a dark background seen through a lens with
/// distortion `d`. Each pixel averages `supersample^2` point samples.
pub fn render_rectangles(
    d: &DistortionParams,
    rects: &[SceneRect],
    background: f64,
    foreground: f64,
    supersample: usize,
) -> GrayImage {
    let (w, h) = (d.image_width as usize, d.image_height as usize);
    let n = supersample.max(1);
    GrayImage::from_fn(w, h, |x, y| {
        let mut hits = 0usize;
        for sy in 0..n {
            for sx in 0..n {
                let p = Vector2::new(
                    x as f64 - 0.5 + (sx as f64 + 0.5) / n as f64,
                    y as f64 - 0.5 + (sy as f64 + 0.5) / n as f64,
                );
                let u = undistort_raw(p, d);
                if rects.iter().any(|r| r.contains(&u)) {
                    hits += 1;
                }
            }
        }
        background + (foreground - background) * hits as f64 / (n * n) as f64
    })
}

/// Twenty rectangle sides spread over a 1024x768 frame.
pub fn calibration_scene() -> Vec<SceneRect> {
    vec![
        SceneRect { x0: 120.0, y0: 90.0, x1: 420.0, y1: 290.0 },
        SceneRect { x0: 600.0, y0: 80.0, x1: 910.0, y1: 300.0 },
        SceneRect { x0: 110.0, y0: 470.0, x1: 400.0, y1: 680.0 },
        SceneRect { x0: 620.0, y0: 460.0, x1: 920.0, y1: 690.0 },
        SceneRect { x0: 410.0, y0: 320.0, x1: 610.0, y1: 450.0 },
    ]
}

/// Pixel-area-exact vertical step: columns left of `edge_x` are `low`,
/// right of it `high`, straddling pixels take the covered fraction.
pub fn vertical_step(width: usize, height: usize, edge_x: f64, low: f64, high: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, _| {
        let covered = (x as f64 + 0.5 - edge_x).clamp(0.0, 1.0);
        low + (high - low) * covered
    })
}

/// Adds i.i.d. Gaussian noise and clamps to `[0, 255]`.
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let data = img
        .data()
        .iter()
        .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 255.0))
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}
