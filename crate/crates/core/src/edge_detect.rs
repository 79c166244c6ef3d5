//! Orientation-gated Canny: Sobel gradients, gated non-maximum suppression and
//! double-threshold hysteresis, run once per edge orientation.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, GrayImage};

/// Per-pixel Sobel responses with magnitude and orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// `atan2(gy, gx)` in `(-pi, pi]`.
    pub orientation: Vec<f64>,
}

impl GradientField {
    /// Builds a field from raw components; magnitude and orientation are derived.
    pub fn from_components(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        for v in [&gx, &gy] {
            if v.len() != width * height {
                return Err(Error::DimensionMismatch {
                    expected: width * height,
                    actual: v.len(),
                });
            }
        }
        let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
        let orientation = gx.iter().zip(&gy).map(|(a, b)| b.atan2(*a)).collect();
        Ok(Self {
            width,
            height,
            gx,
            gy,
            magnitude,
            orientation,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[self.index(x, y)]
    }

    #[inline]
    pub fn orientation_at(&self, x: usize, y: usize) -> f64 {
        self.orientation[self.index(x, y)]
    }

    /// Magnitude at signed coordinates, zero outside the raster.
    #[inline]
    pub(crate) fn magnitude_or_zero(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.magnitude[y as usize * self.width + x as usize]
        }
    }
}

/// Gradient direction quantized to one of four pixel-grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// 0 degrees: neighbours left and right.
    Horizontal,
    /// 45 degrees (y down): neighbours at (+1, +1) and (-1, -1).
    Diagonal,
    /// 90 degrees: neighbours above and below.
    Vertical,
    /// 135 degrees: neighbours at (-1, +1) and (+1, -1).
    AntiDiagonal,
}

impl Direction {
    pub fn quantize(theta: f64) -> Self {
        let t = theta.rem_euclid(PI);
        let eighth = PI / 8.0;
        if t < eighth || t >= 7.0 * eighth {
            Direction::Horizontal
        } else if t < 3.0 * eighth {
            Direction::Diagonal
        } else if t < 5.0 * eighth {
            Direction::Vertical
        } else {
            Direction::AntiDiagonal
        }
    }

    /// Unit pixel step along the direction (the "+" neighbour).
    pub fn step(self) -> (isize, isize) {
        match self {
            Direction::Horizontal => (1, 0),
            Direction::Diagonal => (1, 1),
            Direction::Vertical => (0, 1),
            Direction::AntiDiagonal => (-1, 1),
        }
    }
}

/// Half-open orientation interval `[theta_min, theta_max)` taken modulo pi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationGate {
    pub theta_min: f64,
    pub theta_max: f64,
}

impl OrientationGate {
    /// Gradients pointing mostly along y: horizontal edges.
    pub const HORIZONTAL_EDGES: Self = Self {
        theta_min: FRAC_PI_4,
        theta_max: 3.0 * FRAC_PI_4,
    };

    pub fn admits(&self, theta: f64) -> bool {
        let width = self.theta_max - self.theta_min;
        if width >= PI {
            return true;
        }
        (theta - self.theta_min).rem_euclid(PI) < width
    }

    /// The interval covering the rest of the half circle.
    pub fn complement(&self) -> Self {
        Self {
            theta_min: self.theta_max,
            theta_max: self.theta_min + PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeDetectParams {
    pub t_low: f64,
    pub t_high: f64,
    /// Gaussian pre-smoothing sigma in px.
    pub sigma: f64,
    /// Gate of the horizontal-edge pass; the vertical pass uses its complement.
    pub gate: OrientationGate,
}

impl Default for EdgeDetectParams {
    fn default() -> Self {
        Self {
            t_low: 40.0,
            t_high: 80.0,
            sigma: 1.4,
            gate: OrientationGate::HORIZONTAL_EDGES,
        }
    }
}

impl EdgeDetectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_low > 0.0 && self.t_low < self.t_high) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must satisfy 0 < t_low < t_high (got {} / {})",
                self.t_low, self.t_high
            )));
        }
        if !(self.gate.theta_min < self.gate.theta_max) {
            return Err(Error::InvalidParameter("theta_min must be below theta_max".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn with_gate(&self, gate: OrientationGate) -> Self {
        Self { gate, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    None,
    Strong,
    /// Weak pixel kept through its connection to a strong one.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    labels: Vec<EdgeLabel>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![EdgeLabel::None; width * height],
        }
    }

    /// Map with every `true` cell labelled strong.
    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), width * height);
        let labels = mask
            .iter()
            .map(|&m| if m { EdgeLabel::Strong } else { EdgeLabel::None })
            .collect();
        Self { width, height, labels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[EdgeLabel] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> EdgeLabel {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.label(x, y) != EdgeLabel::None
    }

    pub fn edge_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != EdgeLabel::None).count()
    }
}

/// 3x3 Sobel responses; the one-pixel border is left at zero.
pub fn compute_gradients(img: &GrayImage) -> GradientField {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let p = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                gx[y * w + x] = sx;
                gy[y * w + x] = sy;
            }
        }
    }
    GradientField::from_components(w, h, gx, gy).expect("component lengths match")
}

/// Keeps a magnitude only where it strictly exceeds both neighbours along the
/// quantized gradient direction and its orientation passes the gate.
pub fn non_max_suppress(field: &GradientField, params: &EdgeDetectParams) -> GradientField {
    let (w, h) = (field.width, field.height);
    let mut magnitude = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = field.magnitude[i];
            if m <= 0.0 || !params.gate.admits(field.orientation[i]) {
                continue;
            }
            let (dx, dy) = Direction::quantize(field.orientation[i]).step();
            let (xi, yi) = (x as isize, y as isize);
            let plus = field.magnitude_or_zero(xi + dx, yi + dy);
            let minus = field.magnitude_or_zero(xi - dx, yi - dy);
            if m > plus.max(minus) {
                magnitude[i] = m;
            }
        }
    }
    GradientField {
        width: w,
        height: h,
        gx: field.gx.clone(),
        gy: field.gy.clone(),
        magnitude,
        orientation: field.orientation.clone(),
    }
}

/// Strong above `t_high`, weak in `[t_low, t_high]`; weak pixels survive only
/// when 8-connected to a strong pixel.
pub fn hysteresis(field: &GradientField, params: &EdgeDetectParams) -> EdgeMap {
    let (w, h) = (field.width, field.height);
    let mut labels = vec![EdgeLabel::None; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in field.magnitude.iter().enumerate() {
        if m > params.t_high {
            labels[i] = EdgeLabel::Strong;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if (dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let m = field.magnitude[j];
                if labels[j] == EdgeLabel::None && m >= params.t_low && m <= params.t_high {
                    labels[j] = EdgeLabel::Weak;
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeMap {
        width: w,
        height: h,
        labels,
    }
}

/// Output of the two orientation passes over one image.
#[derive(Debug, Clone)]
pub struct DualEdgeMaps {
    pub horizontal: EdgeMap,
    pub vertical: EdgeMap,
    /// Unsuppressed gradients of the smoothed image, shared by both passes.
    pub gradients: GradientField,
}

/// Smooths once, then runs suppression and hysteresis for the horizontal-edge
/// gate and for its complement. The maps are kept separate.
pub fn detect_edges_dual(img: &GrayImage, params: &EdgeDetectParams) -> Result<DualEdgeMaps> {
    params.validate()?;
    img.ensure_min_size()?;
    let smoothed = gaussian_blur(img, params.sigma)?;
    let gradients = compute_gradients(&smoothed);
    let run = |p: &EdgeDetectParams| hysteresis(&non_max_suppress(&gradients, p), p);
    let horizontal = run(params);
    let vertical = run(&params.with_gate(params.gate.complement()));
    Ok(DualEdgeMaps {
        horizontal,
        vertical,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from_magnitudes(w: usize, h: usize, mags: &[f64], theta: f64) -> GradientField {
        let gx = mags.iter().map(|m| m * theta.cos()).collect();
        let gy = mags.iter().map(|m| m * theta.sin()).collect();
        GradientField::from_components(w, h, gx, gy).unwrap()
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let f = compute_gradients(&GrayImage::filled(12, 9, 90.0));
        assert!(f.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn vertical_step_gradient() {
        let c = 6;
        let img = GrayImage::from_fn(12, 10, |x, _| if x < c { 0.0 } else { 255.0 });
        let f = compute_gradients(&img);
        // Hand convolution: columns c-1 and c see the full 4*255 response.
        for y in 1..9 {
            assert_eq!(f.gx[f.index(c - 1, y)], 1020.0);
            assert_eq!(f.gx[f.index(c, y)], 1020.0);
            assert_eq!(f.gx[f.index(c - 2, y)], 0.0);
            assert_eq!(f.gy[f.index(c, y)], 0.0);
            assert_eq!(f.orientation_at(c, y), 0.0);
        }
        let max_gx = f.gx.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max_gx, 1020.0);

        let ft = compute_gradients(&img.transpose());
        for y in 0..10 {
            for x in 0..12 {
                assert_eq!(f.magnitude_at(x, y), ft.magnitude_at(y, x));
                assert_eq!(f.gx[f.index(x, y)], ft.gy[ft.index(y, x)]);
            }
        }
    }

    #[test]
    fn magnitude_identity() {
        let img = GrayImage::from_fn(16, 16, |x, y| ((x * x + 3 * y) % 200) as f64);
        let f = compute_gradients(&img);
        for i in 0..f.magnitude.len() {
            let lhs = f.magnitude[i] * f.magnitude[i];
            let rhs = f.gx[i] * f.gx[i] + f.gy[i] * f.gy[i];
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
        }
    }

    #[test]
    fn isolated_peak_survives_nms() {
        let mut mags = vec![0.0; 25];
        mags[12] = 50.0;
        let f = field_from_magnitudes(5, 5, &mags, std::f64::consts::FRAC_PI_2);
        let out = non_max_suppress(&f, &EdgeDetectParams::default());
        assert_eq!(out.magnitude[12], 50.0);
    }

    #[test]
    fn gate_boundary_suppresses() {
        let p = EdgeDetectParams::default();
        for theta in [p.gate.theta_max + 1e-3, p.gate.theta_min - 1e-3] {
            let mut mags = vec![0.0; 25];
            mags[12] = 50.0;
            let f = field_from_magnitudes(5, 5, &mags, theta);
            assert_eq!(non_max_suppress(&f, &p).magnitude[12], 0.0);
        }
    }

    #[test]
    fn gates_partition_the_half_circle() {
        let g = OrientationGate::HORIZONTAL_EDGES;
        let c = g.complement();
        for i in 0..2000 {
            let theta = -PI + 2.0 * PI * i as f64 / 2000.0;
            assert!(g.admits(theta) ^ c.admits(theta), "theta {theta}");
        }
        assert!(g.admits(PI / 2.0) && g.admits(-PI / 2.0));
        assert!(c.admits(0.0) && c.admits(PI));
    }

    #[test]
    fn hysteresis_threshold_cases() {
        let p = EdgeDetectParams::default();
        // Chain 90, 50, 50, 90 along a row.
        let mut mags = vec![0.0; 6 * 3];
        for (k, m) in [90.0, 50.0, 50.0, 90.0].into_iter().enumerate() {
            mags[6 + 1 + k] = m;
        }
        let map = hysteresis(&field_from_magnitudes(6, 3, &mags, 0.0), &p);
        assert_eq!(map.edge_count(), 4);
        assert_eq!(map.label(2, 1), EdgeLabel::Weak);
        assert_eq!(map.label(1, 1), EdgeLabel::Strong);

        let mut lone = vec![0.0; 9];
        lone[4] = 50.0;
        assert_eq!(hysteresis(&field_from_magnitudes(3, 3, &lone, 0.0), &p).edge_count(), 0);

        // Exactly t_high is weak, so alone it is dropped; beside a strong pixel it is weak.
        let mut at80 = vec![0.0; 9];
        at80[4] = 80.0;
        assert_eq!(hysteresis(&field_from_magnitudes(3, 3, &at80, 0.0), &p).edge_count(), 0);
        at80[5] = 81.0;
        let map = hysteresis(&field_from_magnitudes(3, 3, &at80, 0.0), &p);
        assert_eq!(map.label(1, 1), EdgeLabel::Weak);
        assert_eq!(map.label(2, 1), EdgeLabel::Strong);
    }

    #[test]
    fn dual_pass_separates_orientations() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            // Fractional coverage keeps the steps off the pixel grid, where the
            // two straddling magnitudes would tie and both be suppressed.
            let mut v = 40.0;
            if y < 30 {
                v += 150.0 * (x as f64 - 19.3).clamp(0.0, 1.0);
            }
            v += 60.0 * (y as f64 - 43.4).clamp(0.0, 1.0);
            v
        });
        let maps = detect_edges_dual(&img, &EdgeDetectParams::default()).unwrap();
        // Vertical step along x = 20 in the upper part.
        let vertical_hits = (5..25).filter(|&y| (18..22).any(|x| maps.vertical.is_edge(x, y))).count();
        let horizontal_hits = (5..25).filter(|&y| (18..22).any(|x| maps.horizontal.is_edge(x, y))).count();
        assert_eq!(vertical_hits, 20);
        assert_eq!(horizontal_hits, 0);
        // Horizontal step along y = 44 on the left part.
        let h_hits = (2..15).filter(|&x| (42..46).any(|y| maps.horizontal.is_edge(x, y))).count();
        let v_hits = (2..15).filter(|&x| (42..46).any(|y| maps.vertical.is_edge(x, y))).count();
        assert_eq!(h_hits, 13);
        assert_eq!(v_hits, 0);
        for y in 0..64 {
            for x in 0..64 {
                assert!(!(maps.vertical.is_edge(x, y) && maps.horizontal.is_edge(x, y)));
            }
        }
    }

    #[test]
    fn blank_image_gives_empty_maps() {
        let maps = detect_edges_dual(&GrayImage::filled(32, 32, 10.0), &EdgeDetectParams::default()).unwrap();
        assert_eq!(maps.horizontal.edge_count(), 0);
        assert_eq!(maps.vertical.edge_count(), 0);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let p = EdgeDetectParams {
            t_low: 90.0,
            ..Default::default()
        };
        assert!(detect_edges_dual(&GrayImage::filled(16, 16, 0.0), &p).is_err());
    }
}
