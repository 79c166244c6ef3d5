//! Matching detections against confirmed ground truth, precision and recall,
//! and TP/FP/FN overlays.

use serde::{Deserialize, Serialize};

use crate::chaining::{EdgeSegment, Point};
use crate::dataset::{SegmentFile, SegmentStatus};
use crate::error::{Error, Result};
use crate::geometry::point_polyline_distance;
use crate::imaging::{GrayImage, RgbImage};

pub const TP_COLOR: [u8; 3] = [0, 200, 0];
pub const FP_COLOR: [u8; 3] = [220, 0, 0];
pub const FN_COLOR: [u8; 3] = [255, 140, 0];

/// Half the overlay stroke width, px.
const STROKE_HALF_WIDTH: f64 = 1.0;
/// Arc-length step used when measuring recall coverage, px.
const COVERAGE_STEP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<EdgeSegment>,
}

impl GroundTruthSet {
    /// The confirmed segments of a reviewed segment file.
    pub fn from_segment_file(file: &SegmentFile) -> Result<Self> {
        file.validate()?;
        Ok(Self {
            image_id: file.image.clone(),
            width: file.width,
            height: file.height,
            segments: file.edge_segments(Some(SegmentStatus::Confirmed))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub match_distance: f64,
    pub coverage_tp: f64,
    pub coverage_recalled: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            match_distance: 2.0,
            coverage_tp: 0.8,
            coverage_recalled: 0.8,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.match_distance > 0.0 && self.match_distance.is_finite()) {
            return Err(Error::InvalidParameter("match_distance must be positive".into()));
        }
        if !frac(self.coverage_tp) || !frac(self.coverage_recalled) {
            return Err(Error::InvalidParameter("coverage fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictKind {
    Tp,
    Fp,
    Fn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentRef {
    Detected(usize),
    Truth(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub image: String,
    pub segment: SegmentRef,
    pub verdict: VerdictKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    /// `None` when there is no ground truth.
    pub recall: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, verdicts: Vec<Verdict>) -> Self {
        Self {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            verdicts,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BBox {
    min: Point,
    max: Point,
}

impl BBox {
    fn of(points: &[Point], pad: f64) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
        }
        Self {
            min: Point::new(min.x - pad, min.y - pad),
            max: Point::new(max.x + pad, max.y + pad),
        }
    }

    fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

fn near(p: &Point, polyline: &[Point], bbox: &BBox, d: f64) -> bool {
    bbox.contains(p) && point_polyline_distance(p, polyline) <= d
}

/// Fraction of `polyline`'s arc length within `d` of any of `others`.
fn covered_fraction(polyline: &[Point], others: &[(&[Point], BBox)], d: f64) -> f64 {
    let hit = |p: &Point| others.iter().any(|(o, b)| near(p, o, b, d));
    let mut total = 0.0;
    let mut covered = 0.0;
    for w in polyline.windows(2) {
        let len = (w[1] - w[0]).norm();
        if len == 0.0 {
            continue;
        }
        let n = (len / COVERAGE_STEP).ceil() as usize;
        let piece = len / n as f64;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            if hit(&(w[0] + (w[1] - w[0]) * t)) {
                covered += piece;
            }
        }
        total += len;
    }
    if total == 0.0 {
        return if polyline.first().is_some_and(|p| hit(p)) { 1.0 } else { 0.0 };
    }
    covered / total
}

/// Classifies detections as TP/FP and truth segments as recalled or FN.
///
/// A detection is TP when at least `coverage_tp` of its points lie within
/// `match_distance` of one truth polyline. A truth segment is recalled when
/// at least `coverage_recalled` of its arc length lies within
/// `match_distance` of the union of TP detections.
pub fn match_segments(
    detected_image: &str,
    detected: &[EdgeSegment],
    truth: &GroundTruthSet,
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if detected_image != truth.image_id {
        return Err(Error::ImageIdMismatch {
            detected: detected_image.to_string(),
            truth: truth.image_id.clone(),
        });
    }
    let d = cfg.match_distance;
    let truth_boxes: Vec<BBox> = truth.segments.iter().map(|s| BBox::of(&s.points, d)).collect();
    let is_tp: Vec<bool> = detected
        .iter()
        .map(|det| {
            truth.segments.iter().zip(&truth_boxes).any(|(t, b)| {
                let within = det.points.iter().filter(|p| near(p, &t.points, b, d)).count();
                within as f64 >= cfg.coverage_tp * det.points.len() as f64
            })
        })
        .collect();
    let tp_lines: Vec<(&[Point], BBox)> = detected
        .iter()
        .zip(&is_tp)
        .filter(|(_, tp)| **tp)
        .map(|(s, _)| (s.points.as_slice(), BBox::of(&s.points, d)))
        .collect();

    let mut verdicts: Vec<Verdict> = is_tp
        .iter()
        .enumerate()
        .map(|(i, tp)| Verdict {
            image: truth.image_id.clone(),
            segment: SegmentRef::Detected(i),
            verdict: if *tp { VerdictKind::Tp } else { VerdictKind::Fp },
        })
        .collect();
    let mut fn_ = 0;
    for (i, t) in truth.segments.iter().enumerate() {
        if covered_fraction(&t.points, &tp_lines, d) < cfg.coverage_recalled {
            fn_ += 1;
            verdicts.push(Verdict {
                image: truth.image_id.clone(),
                segment: SegmentRef::Truth(i),
                verdict: VerdictKind::Fn,
            });
        }
    }
    let tp = is_tp.iter().filter(|t| **t).count();
    Ok(EvalReport::from_counts(tp, detected.len() - tp, fn_, verdicts))
}

/// Micro-average: counts are summed and P/R recomputed from the sums.
pub fn aggregate_reports(reports: &[EvalReport]) -> EvalReport {
    let (tp, fp, fn_) = reports
        .iter()
        .fold((0, 0, 0), |(a, b, c), r| (a + r.tp, b + r.fp, c + r.fn_));
    let verdicts = reports.iter().flat_map(|r| r.verdicts.iter().cloned()).collect();
    EvalReport::from_counts(tp, fp, fn_, verdicts)
}

fn paint_polyline(img: &mut RgbImage, polyline: &[Point], color: [u8; 3]) {
    if polyline.is_empty() {
        return;
    }
    let bbox = BBox::of(polyline, STROKE_HALF_WIDTH);
    let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64 - 1.0) as usize;
    if bbox.max.x < 0.0 || bbox.max.y < 0.0 || img.width() == 0 || img.height() == 0 {
        return;
    }
    let (x0, x1) = (clamp(bbox.min.x.ceil(), img.width()), clamp(bbox.max.x.floor(), img.width()));
    let (y0, y1) = (clamp(bbox.min.y.ceil(), img.height()), clamp(bbox.max.y.floor(), img.height()));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if point_polyline_distance(&Point::new(x as f64, y as f64), polyline) <= STROKE_HALF_WIDTH {
                img.set(x, y, color);
            }
        }
    }
}

/// Grayscale image promoted to RGB with FN truth segments in orange, FP
/// detections in red and TP detections in green, drawn in that order.
pub fn render_overlay(image: &GrayImage, report: &EvalReport, detected: &[EdgeSegment], truth: &GroundTruthSet) -> RgbImage {
    let mut out = RgbImage::from_gray(image);
    for kind in [VerdictKind::Fn, VerdictKind::Fp, VerdictKind::Tp] {
        for v in report.verdicts.iter().filter(|v| v.verdict == kind) {
            let seg = match v.segment {
                SegmentRef::Detected(i) => detected.get(i),
                SegmentRef::Truth(i) => truth.segments.get(i),
            };
            let color = match kind {
                VerdictKind::Tp => TP_COLOR,
                VerdictKind::Fp => FP_COLOR,
                VerdictKind::Fn => FN_COLOR,
            };
            if let Some(seg) = seg {
                paint_polyline(&mut out, &seg.points, color);
            }
        }
    }
    out
}
