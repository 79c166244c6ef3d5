//! Brown-Conrady undistortion, plumb-line straightness residuals and MSAC
//! estimation of the distortion coefficients.
//!
//! Pixel coordinates are centred on `(xc, yc)` and divided by the image
//! half-diagonal before the coefficients apply, so `k1..k3` and `p1, p2` are
//! dimensionless and of order one. The radius is taken from the distorted
//! (observed) normalized coordinates.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chaining::{EdgeSegment, Point};
use crate::error::{Error, Result};
use crate::geometry::fit_line_tls;

/// Image domain radius (normalized) over which the map must stay injective.
const DOMAIN_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub xc: f64,
    pub yc: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl DistortionParams {
    /// Zero coefficients, centre at the middle of the pixel grid.
    pub fn identity(image_width: u32, image_height: u32) -> Self {
        Self {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            xc: (f64::from(image_width) - 1.0) / 2.0,
            yc: (f64::from(image_height) - 1.0) / 2.0,
            image_width,
            image_height,
        }
    }

    /// Normalization length: half the image diagonal in px.
    pub fn scale(&self) -> f64 {
        0.5 * f64::from(self.image_width).hypot(f64::from(self.image_height))
    }

    /// Largest normalized radius of the image domain inflated by 10 %.
    fn domain_radius(&self) -> f64 {
        let (w, h) = (f64::from(self.image_width) - 1.0, f64::from(self.image_height) - 1.0);
        let far = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|&(x, y)| (x - self.xc).hypot(y - self.yc))
            .fold(0.0, f64::max);
        DOMAIN_MARGIN * far / self.scale()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k1, self.k2, self.k3, self.p1, self.p2, self.xc, self.yc];
        if all.iter().any(|v| !v.is_finite()) || self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidParameter("distortion parameters must be finite".into()));
        }
        if !self.radial_is_monotone() {
            return Err(Error::NonInjective);
        }
        Ok(())
    }

    /// Checks that `r (1 + k1 r^2 + k2 r^4 + k3 r^6)` increases on the domain.
    ///
    /// With `s = r^2` the derivative is `f(s) = 1 + 3 k1 s + 5 k2 s^2 + 7 k3 s^3`;
    /// its minimum on `[0, s_max]` is at an end point or a root of `f'`.
    fn radial_is_monotone(&self) -> bool {
        let s_max = self.domain_radius().powi(2);
        let f = |s: f64| 1.0 + 3.0 * self.k1 * s + 5.0 * self.k2 * s * s + 7.0 * self.k3 * s * s * s;
        let mut candidates = vec![0.0, s_max];
        // f'(s) = 3 k1 + 10 k2 s + 21 k3 s^2
        let (a, b, c) = (21.0 * self.k3, 10.0 * self.k2, 3.0 * self.k1);
        if a.abs() > 1e-300 {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                candidates.push((-b + sq) / (2.0 * a));
                candidates.push((-b - sq) / (2.0 * a));
            }
        } else if b.abs() > 1e-300 {
            candidates.push(-c / b);
        }
        candidates
            .into_iter()
            .filter(|s| (0.0..=s_max).contains(s))
            .all(|s| f(s) > 0.0)
    }
}

/// Parameters that have passed [`DistortionParams::validate`].
#[derive(Debug, Clone, Copy)]
pub struct Undistorter {
    params: DistortionParams,
    scale: f64,
}

impl Undistorter {
    pub fn new(params: DistortionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            scale: params.scale(),
        })
    }

    pub fn params(&self) -> &DistortionParams {
        &self.params
    }

    pub fn apply(&self, p: &Point) -> Point {
        let d = &self.params;
        let x = (p.x - d.xc) / self.scale;
        let y = (p.y - d.yc) / self.scale;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
        let xu = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
        let yu = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
        Point::new(d.xc + self.scale * xu, d.yc + self.scale * yu)
    }
}

/// Maps an observed (distorted) pixel position to its undistorted position.
pub fn undistort_point(p: &Point, params: &DistortionParams) -> Result<Point> {
    Ok(Undistorter::new(*params)?.apply(p))
}

fn undistorted_points(seg: &EdgeSegment, u: &Undistorter) -> Vec<Point> {
    seg.points.iter().map(|p| u.apply(p)).collect()
}

/// RMS orthogonal deviation (px) of the undistorted points from their TLS line.
pub fn straightness_residual(seg: &EdgeSegment, params: &DistortionParams) -> Result<f64> {
    let u = Undistorter::new(*params)?;
    Ok(fit_line_tls(&undistorted_points(seg, &u))?.rms_deviation)
}

/// Truncated quadratic loss: `sum(min(r^2, t^2))`.
pub fn msac_score(residuals: &[f64], threshold: f64) -> f64 {
    let t2 = threshold * threshold;
    residuals.iter().map(|r| (r * r).min(t2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsacConfig {
    /// Straightness residual (px) separating inliers from outliers.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    /// Segments per hypothesis.
    pub sample_size: usize,
    /// Probability used for the adaptive iteration bound.
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for MsacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.5,
            max_iterations: 2000,
            sample_size: 3,
            confidence: 0.99,
            rng_seed: 0,
        }
    }
}

impl MsacConfig {
    pub fn validate(&self, flags: &ModelFlags) -> Result<()> {
        let free = flags.free_params().len();
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidParameter("inlier threshold must be positive".into()));
        }
        if self.sample_size == 0 || self.sample_size < free.div_ceil(2) {
            return Err(Error::InvalidParameter(format!(
                "sample size {} too small for {free} free parameters",
                self.sample_size
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Which coefficients the estimator may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelFlags {
    pub k1: bool,
    pub k2: bool,
    pub k3: bool,
    pub p1: bool,
    pub p2: bool,
    /// Frees the distortion centre `(xc, yc)`.
    pub center: bool,
}

impl Default for ModelFlags {
    fn default() -> Self {
        Self {
            k1: true,
            k2: true,
            k3: false,
            p1: false,
            p2: false,
            center: false,
        }
    }
}

impl ModelFlags {
    pub const NONE: Self = Self {
        k1: false,
        k2: false,
        k3: false,
        p1: false,
        p2: false,
        center: false,
    };

    fn free_params(&self) -> Vec<Param> {
        let mut v = Vec::new();
        for (on, p) in [
            (self.k1, Param::K1),
            (self.k2, Param::K2),
            (self.k3, Param::K3),
            (self.p1, Param::P1),
            (self.p2, Param::P2),
            (self.center, Param::Xc),
            (self.center, Param::Yc),
        ] {
            if on {
                v.push(p);
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    K1,
    K2,
    K3,
    P1,
    P2,
    Xc,
    Yc,
}

/// Free-parameter vector in normalized units (centre divided by the scale).
#[derive(Debug, Clone)]
struct ParamVector<'a> {
    free: &'a [Param],
    base: DistortionParams,
}

impl ParamVector<'_> {
    fn get(&self, params: &DistortionParams) -> DVector<f64> {
        let s = params.scale();
        DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|p| match p {
                Param::K1 => params.k1,
                Param::K2 => params.k2,
                Param::K3 => params.k3,
                Param::P1 => params.p1,
                Param::P2 => params.p2,
                Param::Xc => params.xc / s,
                Param::Yc => params.yc / s,
            }),
        )
    }

    fn set(&self, theta: &DVector<f64>) -> DistortionParams {
        let mut out = self.base;
        let s = out.scale();
        for (p, v) in self.free.iter().zip(theta.iter()) {
            match p {
                Param::K1 => out.k1 = *v,
                Param::K2 => out.k2 = *v,
                Param::K3 => out.k3 = *v,
                Param::P1 => out.p1 = *v,
                Param::P2 => out.p2 = *v,
                Param::Xc => out.xc = v * s,
                Param::Yc => out.yc = v * s,
            }
        }
        out
    }
}

/// Signed point-to-line deviations of every segment after undistortion,
/// stacked. Normals follow each segment's chord so signs vary smoothly
/// with the parameters. `None` when the parameters are not admissible.
fn stacked_residuals(segments: &[&EdgeSegment], params: &DistortionParams) -> Option<DVector<f64>> {
    let u = Undistorter::new(*params).ok()?;
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.points.len()).sum());
    for seg in segments {
        let pts = undistorted_points(seg, &u);
        let line = fit_line_tls(&pts).ok()?;
        let chord = pts[pts.len() - 1] - pts[0];
        let mut normal = Vector2::new(-line.direction.y, line.direction.x);
        if line.direction.dot(&chord) < 0.0 {
            normal = -normal;
        }
        out.extend(pts.iter().map(|p| (p - line.point).dot(&normal)));
    }
    Some(DVector::from_vec(out))
}

const JACOBIAN_STEP: f64 = 1e-6;
const MAX_GN_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 20;
const RELATIVE_STEP_TOL: f64 = 1e-10;

fn numeric_jacobian(
    segments: &[&EdgeSegment],
    pv: &ParamVector<'_>,
    theta: &DVector<f64>,
    step: f64,
) -> Option<DMatrix<f64>> {
    let rows = segments.iter().map(|s| s.points.len()).sum();
    let mut jac = DMatrix::zeros(rows, theta.len());
    for j in 0..theta.len() {
        let mut plus = theta.clone();
        plus[j] += step;
        let mut minus = theta.clone();
        minus[j] -= step;
        let rp = stacked_residuals(segments, &pv.set(&plus))?;
        let rm = stacked_residuals(segments, &pv.set(&minus))?;
        jac.set_column(j, &((rp - rm) / (2.0 * step)));
    }
    Some(jac)
}

/// Damped Gauss-Newton on the stacked straightness residuals.
fn refine_params(segments: &[&EdgeSegment], start: &DistortionParams, free: &[Param]) -> DistortionParams {
    if free.is_empty() {
        return *start;
    }
    let pv = ParamVector { free, base: *start };
    let mut theta = pv.get(start);
    let Some(mut residuals) = stacked_residuals(segments, start) else {
        return *start;
    };
    let mut cost = residuals.norm_squared();
    for _ in 0..MAX_GN_ITERATIONS {
        let Some(jac) = numeric_jacobian(segments, &pv, &theta, JACOBIAN_STEP) else {
            break;
        };
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &residuals;
        let svd = jtj.svd(true, true);
        let tol = 1e-14 * svd.singular_values.max();
        let Ok(mut step) = svd.solve(&(-jtr), tol) else {
            break;
        };
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &theta + &step;
            if let Some(r) = stacked_residuals(segments, &pv.set(&candidate)) {
                let c = r.norm_squared();
                if c < cost {
                    theta = candidate;
                    residuals = r;
                    cost = c;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || step.norm() <= RELATIVE_STEP_TOL * (1.0 + theta.norm()) {
            break;
        }
    }
    pv.set(&theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: DistortionParams,
    /// Indices of segments whose residual is within the inlier threshold.
    pub inliers: Vec<usize>,
    pub msac_score: f64,
    /// Straightness residual (px) of every input segment under `params`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl CalibrationResult {
    /// Scores `residuals` and marks those `<= threshold` as inliers.
    pub fn from_residuals(params: DistortionParams, residuals: Vec<f64>, threshold: f64, iterations: usize) -> Self {
        let inliers = residuals
            .iter()
            .enumerate()
            .filter(|(_, r)| **r <= threshold)
            .map(|(i, _)| i)
            .collect();
        Self {
            params,
            inliers,
            msac_score: msac_score(&residuals, threshold),
            residuals,
            iterations,
        }
    }
}

fn all_residuals(segments: &[EdgeSegment], params: &DistortionParams) -> Vec<f64> {
    let Ok(u) = Undistorter::new(*params) else {
        return vec![f64::INFINITY; segments.len()];
    };
    segments
        .iter()
        .map(|s| {
            fit_line_tls(&undistorted_points(s, &u))
                .map(|l| l.rms_deviation)
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn adaptive_bound(inlier_ratio: f64, sample_size: usize, confidence: f64, cap: usize) -> usize {
    let all_good = inlier_ratio.powi(sample_size as i32);
    if all_good <= 0.0 {
        return cap;
    }
    if all_good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// MSAC estimation of the free distortion coefficients.
///
/// Each hypothesis fits the free parameters to a random sample of segments
/// (starting from `base`) and is ranked by [`msac_score`] over all segments.
/// The iteration count adapts to the best inlier ratio. The winner is refit
/// on its inliers, and the refit is kept when it does not raise the score.
/// Results depend only on the inputs and `cfg.rng_seed`.
pub fn estimate_distortion(
    segments: &[EdgeSegment],
    base: &DistortionParams,
    cfg: &MsacConfig,
    flags: &ModelFlags,
) -> Result<CalibrationResult> {
    base.validate()?;
    cfg.validate(flags)?;
    let free = flags.free_params();
    if segments.len() < cfg.sample_size {
        return Err(Error::InsufficientSegments {
            needed: cfg.sample_size,
            got: segments.len(),
        });
    }
    if let Some(bad) = segments.iter().find(|s| s.points.len() < 2) {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: bad.points.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = segments.len();
    let mut best: Option<(f64, DistortionParams, usize)> = None;
    let mut bound = cfg.max_iterations.max(1);
    let mut iterations = 0;
    while iterations < bound {
        iterations += 1;
        let mut sample = rand::seq::index::sample(&mut rng, n, cfg.sample_size).into_vec();
        sample.sort_unstable();
        let chosen: Vec<&EdgeSegment> = sample.iter().map(|&i| &segments[i]).collect();
        let hypothesis = refine_params(&chosen, base, &free);
        let residuals = all_residuals(segments, &hypothesis);
        let score = msac_score(&residuals, cfg.inlier_threshold);
        let inliers = residuals.iter().filter(|&&r| r <= cfg.inlier_threshold).count();
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, hypothesis, inliers));
            bound = adaptive_bound(
                inliers as f64 / n as f64,
                cfg.sample_size,
                cfg.confidence,
                cfg.max_iterations.max(1),
            )
            .max(iterations.min(cfg.max_iterations.max(1)));
        }
    }

    let (best_score, best_params, best_inliers) = best.expect("at least one hypothesis");
    if best_inliers < cfg.sample_size {
        return Err(Error::CalibrationUnavailable {
            needed: cfg.sample_size,
        });
    }
    let best_residuals = all_residuals(segments, &best_params);
    let inlier_segments: Vec<&EdgeSegment> = best_residuals
        .iter()
        .zip(segments)
        .filter(|(r, _)| **r <= cfg.inlier_threshold)
        .map(|(_, s)| s)
        .collect();
    let refit = refine_params(&inlier_segments, &best_params, &free);
    let refit_residuals = all_residuals(segments, &refit);
    let (params, residuals) = if msac_score(&refit_residuals, cfg.inlier_threshold) <= best_score {
        (refit, refit_residuals)
    } else {
        (best_params, best_residuals)
    };
    let result = CalibrationResult::from_residuals(params, residuals, cfg.inlier_threshold, iterations);
    if result.inliers.len() < cfg.sample_size {
        return Err(Error::CalibrationUnavailable {
            needed: cfg.sample_size,
        });
    }
    Ok(result)
}

/// The inlier segments of a calibration, in input order.
pub fn filter_straight(segments: &[EdgeSegment], result: &CalibrationResult) -> Vec<EdgeSegment> {
    result
        .inliers
        .iter()
        .filter_map(|&i| segments.get(i).cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaining::OrientationClass;
    use crate::synth::{distort_point, distorted_line, SceneLine};
    use proptest::prelude::*;

    const W: u32 = 1024;
    const H: u32 = 768;

    fn params(k1: f64, k2: f64) -> DistortionParams {
        DistortionParams {
            k1,
            k2,
            ..DistortionParams::identity(W, H)
        }
    }

    #[test]
    fn zero_coefficients_are_identity() {
        let p = Point::new(13.25, 700.5);
        assert_eq!(undistort_point(&p, &DistortionParams::identity(W, H)).unwrap(), p);
    }

    #[test]
    fn radial_factor_at_half_radius() {
        let d = params(-0.2, 0.0);
        let s = d.scale();
        let p = Point::new(d.xc + 0.5 * s, d.yc);
        let u = undistort_point(&p, &d).unwrap();
        assert!((u.x - (d.xc + 0.5 * s * 0.95)).abs() < 1e-9);
        assert!((u.y - d.yc).abs() < 1e-12);
    }

    #[test]
    fn centre_is_fixed() {
        let d = DistortionParams {
            k1: 0.3,
            k2: -0.1,
            k3: 0.02,
            p1: 0.01,
            p2: -0.02,
            ..DistortionParams::identity(W, H)
        };
        let c = Point::new(d.xc, d.yc);
        assert_eq!(undistort_point(&c, &d).unwrap(), c);
    }

    #[test]
    fn non_injective_parameters_rejected() {
        let d = params(-0.6, 0.0);
        assert!(matches!(undistort_point(&Point::new(1.0, 1.0), &d), Err(Error::NonInjective)));
        assert!(params(-0.25, 0.05).validate().is_ok());
    }

    fn line_segment(line: SceneLine, truth: &DistortionParams) -> EdgeSegment {
        distorted_line(&line, truth, 1.0, OrientationClass::Horizontal)
    }

    #[test]
    fn straightness_of_generated_lines() {
        let truth = params(-0.25, 0.0);
        let seg = line_segment(SceneLine::new((150.0, 120.0), (700.0, 160.0)), &truth);
        assert!(straightness_residual(&seg, &truth).unwrap() < 1e-6);
        let mut last = 0.0;
        for k in [-0.05, -0.15, -0.25] {
            let s = line_segment(SceneLine::new((150.0, 120.0), (700.0, 160.0)), &params(k, 0.0));
            let r = straightness_residual(&s, &DistortionParams::identity(W, H)).unwrap();
            assert!(r > last);
            last = r;
        }
        let flat = EdgeSegment::new(
            (0..50).map(|i| Point::new(10.0 + i as f64, 30.0 + 0.5 * i as f64)).collect(),
            OrientationClass::Horizontal,
        )
        .unwrap();
        assert!(straightness_residual(&flat, &DistortionParams::identity(W, H)).unwrap() < 1e-12);
    }

    #[test]
    fn msac_score_cases() {
        assert!((msac_score(&[0.1, 0.3, 2.0], 0.5) - 0.35).abs() < 1e-12);
        assert_eq!(msac_score(&[0.0; 4], 0.5), 0.0);
        assert_eq!(msac_score(&[0.5, 3.0, 100.0], 0.5), 3.0 * 0.25);
    }

    proptest! {
        #[test]
        fn msac_score_monotone_and_order_free(
            mut r in proptest::collection::vec(0.0..3.0f64, 1..20),
            bump in 0.0..1.0f64,
            idx in 0usize..20,
        ) {
            let t = 0.5;
            let s = msac_score(&r, t);
            let mut rev = r.clone();
            rev.reverse();
            prop_assert!((msac_score(&rev, t) - s).abs() < 1e-12);
            let i = idx % r.len();
            r[i] += bump;
            prop_assert!(msac_score(&r, t) >= s);
        }

        #[test]
        fn residual_rigid_invariance(angle in 0.0..std::f64::consts::TAU, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let base: Vec<Point> = (0..40)
                .map(|i| Point::new(300.0 + i as f64 * 3.0, 200.0 + 0.02 * (i as f64 - 20.0).powi(2)))
                .collect();
            let (s, c) = angle.sin_cos();
            let moved: Vec<Point> = base
                .iter()
                .map(|p| Point::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty))
                .collect();
            let id = DistortionParams::identity(W, H);
            let a = straightness_residual(&EdgeSegment::new(base, OrientationClass::Vertical).unwrap(), &id).unwrap();
            let b = straightness_residual(&EdgeSegment::new(moved, OrientationClass::Vertical).unwrap(), &id).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// Twenty lines spread over the frame, away from the centre.
    fn scene_lines() -> Vec<SceneLine> {
        let mut lines = Vec::new();
        for i in 0..10 {
            let y = 90.0 + 62.0 * i as f64;
            let x0 = 80.0 + 15.0 * i as f64;
            lines.push(SceneLine::new((x0, y), (x0 + 420.0, y + 8.0)));
        }
        for i in 0..10 {
            let x = 560.0 + 40.0 * i as f64;
            lines.push(SceneLine::new((x, 80.0 + 10.0 * i as f64), (x - 10.0, 600.0)));
        }
        lines
    }

    fn arc_outlier(cx: f64, cy: f64, start: f64) -> EdgeSegment {
        let r = 500.0;
        let pts = (0..200)
            .map(|i| {
                let t = start + i as f64 / r;
                Point::new(cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        EdgeSegment::new(pts, OrientationClass::Horizontal).unwrap()
    }

    #[test]
    fn recovers_coefficients_from_clean_lines() {
        let truth = params(-0.25, 0.05);
        let segs: Vec<_> = scene_lines().into_iter().map(|l| line_segment(l, &truth)).collect();
        let res = estimate_distortion(&segs, &DistortionParams::identity(W, H), &MsacConfig::default(), &ModelFlags::default())
            .unwrap();
        assert!((res.params.k1 + 0.25).abs() < 1e-4 && (res.params.k2 - 0.05).abs() < 1e-4, "{:?}", res.params);
        assert_eq!(res.inliers.len(), 20);
    }

    #[test]
    fn rejects_arc_outliers() {
        let truth = params(-0.25, 0.05);
        let mut segs: Vec<_> = scene_lines().into_iter().map(|l| line_segment(l, &truth)).collect();
        for i in 0..13 {
            segs.push(arc_outlier(150.0 + 55.0 * i as f64, 950.0 - 30.0 * i as f64, -1.77 + 0.01 * i as f64));
        }
        let res = estimate_distortion(&segs, &DistortionParams::identity(W, H), &MsacConfig::default(), &ModelFlags::default())
            .unwrap();
        assert!((res.params.k1 + 0.25).abs() < 1e-3 && (res.params.k2 - 0.05).abs() < 1e-2, "{:?}", res.params);
        assert_eq!(res.inliers, (0..20).collect::<Vec<_>>());
        assert_eq!(filter_straight(&segs, &res).len(), 20);
    }

    #[test]
    fn no_free_parameters_gives_identity() {
        let segs: Vec<_> = (0..5)
            .map(|i| {
                EdgeSegment::new(
                    (0..30).map(|k| Point::new(100.0 + k as f64 * 4.0, 50.0 + 100.0 * i as f64)).collect(),
                    OrientationClass::Horizontal,
                )
                .unwrap()
            })
            .collect();
        let id = DistortionParams::identity(W, H);
        let res = estimate_distortion(&segs, &id, &MsacConfig::default(), &ModelFlags::NONE).unwrap();
        assert_eq!(res.params, id);
        assert_eq!(res.msac_score, 0.0);
    }

    #[test]
    fn estimation_is_reproducible() {
        let truth = params(-0.2, 0.03);
        let mut segs: Vec<_> = scene_lines().into_iter().map(|l| line_segment(l, &truth)).collect();
        segs.push(arc_outlier(300.0, 850.0, -1.77));
        let cfg = MsacConfig {
            rng_seed: 7,
            ..Default::default()
        };
        let id = DistortionParams::identity(W, H);
        let a = estimate_distortion(&segs, &id, &cfg, &ModelFlags::default()).unwrap();
        let b = estimate_distortion(&segs, &id, &cfg, &ModelFlags::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.k1.to_bits(), b.params.k1.to_bits());
    }

    #[test]
    fn estimation_errors() {
        let id = DistortionParams::identity(W, H);
        let one = vec![line_segment(SceneLine::new((10.0, 10.0), (200.0, 20.0)), &id)];
        assert!(matches!(
            estimate_distortion(&one, &id, &MsacConfig::default(), &ModelFlags::default()),
            Err(Error::InsufficientSegments { .. })
        ));
        // Three strongly curved arcs cannot be straightened together.
        let arcs: Vec<_> = (0..3).map(|i| arc_outlier(200.0 + 200.0 * i as f64, 700.0, -1.77)).collect();
        let cfg = MsacConfig {
            inlier_threshold: 0.01,
            max_iterations: 20,
            ..Default::default()
        };
        assert!(matches!(
            estimate_distortion(&arcs, &id, &cfg, &ModelFlags::default()),
            Err(Error::CalibrationUnavailable { .. })
        ));
    }

    #[test]
    fn filter_straight_threshold_rule() {
        let segs: Vec<_> = (0..2)
            .map(|i| {
                EdgeSegment::new(vec![Point::new(0.0, i as f64), Point::new(5.0, i as f64)], OrientationClass::Vertical)
                    .unwrap()
            })
            .collect();
        let res = CalibrationResult::from_residuals(DistortionParams::identity(W, H), vec![0.49, 0.51], 0.5, 1);
        assert_eq!(filter_straight(&segs, &res), vec![segs[0].clone()]);
        let none = CalibrationResult::from_residuals(DistortionParams::identity(W, H), vec![0.9, 0.51], 0.5, 1);
        assert!(filter_straight(&segs, &none).is_empty());
    }

    #[test]
    fn jacobian_self_consistency() {
        let truth = params(-0.25, 0.05);
        let segs: Vec<_> = scene_lines().into_iter().take(4).map(|l| line_segment(l, &truth)).collect();
        let refs: Vec<&EdgeSegment> = segs.iter().collect();
        let flags = ModelFlags {
            p1: true,
            center: true,
            ..Default::default()
        };
        let free = flags.free_params();
        let start = DistortionParams {
            k1: -0.13,
            k2: 0.02,
            p1: 0.004,
            xc: 520.0,
            yc: 380.0,
            ..DistortionParams::identity(W, H)
        };
        let pv = ParamVector { free: &free, base: start };
        let theta = pv.get(&start);
        let fine = numeric_jacobian(&refs, &pv, &theta, JACOBIAN_STEP).unwrap();
        let coarse = numeric_jacobian(&refs, &pv, &theta, 1e-4).unwrap();
        for j in 0..fine.ncols() {
            let a = fine.column(j);
            let b = coarse.column(j);
            assert!((a - b).norm() <= 1e-4 * b.norm().max(1e-12), "column {j}");
        }
    }

    #[test]
    fn synthetic_generator_inverts_undistortion() {
        let d = DistortionParams {
            k1: -0.25,
            k2: 0.05,
            p1: 0.002,
            ..DistortionParams::identity(W, H)
        };
        let u = Point::new(812.0, 95.0);
        let back = undistort_point(&distort_point(&u, &d), &d).unwrap();
        assert!((back - u).norm() < 1e-9);
    }
}
