//! Candidate extraction: merging of co-circular segments and shape filtering,
//! plus the staged detection pipeline that feeds them.

use std::cmp::Ordering;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::chaining::{chain_edges, refine_subpixel, EdgeSegment, OrientationClass, Point};
use crate::edge_detect::{detect_edges_dual, EdgeDetectParams};
use crate::error::{Error, Result};
use crate::geometry::{arc_length, fit_circle_taubin, fit_line_tls, LineFit};
use crate::imaging::{clahe, ClaheParams, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMeasure {
    Rms,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergePolicy {
    /// Merge when the candidate's residual to the anchor's circle is below this (px).
    pub residual_threshold: f64,
    /// Endpoint distance (px) within which two segments are neighbours.
    pub neighbor_radius: f64,
    pub max_merge_rounds: usize,
    pub residual_measure: ResidualMeasure,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            residual_threshold: 1.0,
            neighbor_radius: 50.0,
            max_merge_rounds: 3,
            residual_measure: ResidualMeasure::Rms,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_threshold > 0.0 && self.neighbor_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "merge residual threshold and neighbour radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapePolicy {
    /// Minimum arc length (px), inclusive.
    pub min_length: f64,
}

impl Default for ShapePolicy {
    fn default() -> Self {
        Self { min_length: 100.0 }
    }
}

/// Circle fitted to a segment, or its TLS line when the circle is degenerate.
#[derive(Debug, Clone, Copy)]
enum Curve {
    Circle { center: Point, radius: f64 },
    Line(LineFit),
}

impl Curve {
    fn fit(points: &[Point]) -> Option<Self> {
        if points.len() >= 3 {
            if let Ok(c) = fit_circle_taubin(points) {
                if !c.degenerate {
                    return Some(Curve::Circle {
                        center: c.center,
                        radius: c.radius,
                    });
                }
            }
        }
        fit_line_tls(points).ok().map(Curve::Line)
    }

    fn distance(&self, p: &Point) -> f64 {
        match self {
            Curve::Circle { center, radius } => ((p - center).norm() - radius).abs(),
            Curve::Line(l) => l.signed_distance(p).abs(),
        }
    }

    fn residual(&self, points: &[Point], measure: ResidualMeasure) -> f64 {
        match measure {
            ResidualMeasure::Rms => {
                let ss: f64 = points.iter().map(|p| self.distance(p).powi(2)).sum();
                (ss / points.len() as f64).sqrt()
            }
            ResidualMeasure::Max => points.iter().map(|p| self.distance(p)).fold(0.0, f64::max),
        }
    }

    /// Position along the curve used to order merged points.
    fn arc_parameters(&self, points: &[Point]) -> Vec<f64> {
        match self {
            Curve::Circle { center, .. } => {
                let n = points.len() as f64;
                let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + (p - center)) / n;
                let reference = mean.y.atan2(mean.x);
                points
                    .iter()
                    .map(|p| {
                        let d = p - center;
                        let a = d.y.atan2(d.x) - reference;
                        (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
                    })
                    .collect()
            }
            Curve::Line(l) => points.iter().map(|p| (p - l.point).dot(&l.direction)).collect(),
        }
    }
}

fn cmp_points(a: &Point, b: &Point) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// Order-independent sort key: smallest point, then length.
fn canonical_key(seg: &EdgeSegment) -> (Point, usize) {
    let min = *seg
        .points
        .iter()
        .min_by(|a, b| cmp_points(a, b))
        .expect("segment has points");
    (min, seg.points.len())
}

fn sort_canonical(segments: &mut [EdgeSegment]) {
    segments.sort_by(|a, b| {
        let (pa, na) = canonical_key(a);
        let (pb, nb) = canonical_key(b);
        cmp_points(&pa, &pb).then(na.cmp(&nb))
    });
}

fn endpoints_near(a: &EdgeSegment, b: &EdgeSegment, radius: f64) -> bool {
    [a.first(), a.last()]
        .iter()
        .any(|p| [b.first(), b.last()].iter().any(|q| (p - q).norm() <= radius))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns true when the sets were distinct.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Whether `candidate` lies on the circle fitted to `anchor` within the policy.
pub fn merge_predicate(anchor: &EdgeSegment, candidate: &EdgeSegment, policy: &MergePolicy) -> bool {
    if !endpoints_near(anchor, candidate, policy.neighbor_radius) {
        return false;
    }
    match Curve::fit(&anchor.points) {
        Some(curve) => curve.residual(&candidate.points, policy.residual_measure) < policy.residual_threshold,
        None => false,
    }
}

/// Merges segments lying on a common circle.
///
/// Each round links every ordered pair passing [`merge_predicate`] in either
/// direction, closes the links transitively, refits the union and orders its
/// points along the refitted curve. Rounds repeat until nothing merges or
/// `max_merge_rounds` is reached. Output order is canonical, so input order
/// does not affect the result.
pub fn merge_segments(segments: &[EdgeSegment], policy: &MergePolicy) -> Vec<EdgeSegment> {
    let mut current: Vec<EdgeSegment> = segments.to_vec();
    sort_canonical(&mut current);
    for _ in 0..policy.max_merge_rounds {
        let n = current.len();
        let curves: Vec<Option<Curve>> = current.iter().map(|s| Curve::fit(&s.points)).collect();
        let mut sets = DisjointSet::new(n);
        let mut merged_any = false;
        for i in 0..n {
            let Some(curve) = curves[i] else { continue };
            for j in 0..n {
                if i == j || !endpoints_near(&current[i], &current[j], policy.neighbor_radius) {
                    continue;
                }
                if curve.residual(&current[j].points, policy.residual_measure) < policy.residual_threshold {
                    merged_any |= sets.union(i, j);
                }
            }
        }
        if !merged_any {
            break;
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = sets.find(i);
            groups[r].push(i);
        }
        let mut next = Vec::with_capacity(n);
        for group in groups.into_iter().filter(|g| !g.is_empty()) {
            if group.len() == 1 {
                next.push(current[group[0]].clone());
                continue;
            }
            next.push(join_group(group.iter().map(|&i| &current[i])));
        }
        sort_canonical(&mut next);
        current = next;
    }
    current
}

fn join_group<'a>(members: impl Iterator<Item = &'a EdgeSegment>) -> EdgeSegment {
    let members: Vec<&EdgeSegment> = members.collect();
    let points: Vec<Point> = members.iter().flat_map(|s| s.points.iter().copied()).collect();
    let curve = Curve::fit(&points).expect("merged points span more than one location");
    let params = curve.arc_parameters(&points);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| params[a].total_cmp(&params[b]).then(cmp_points(&points[a], &points[b])));
    EdgeSegment {
        points: order.into_iter().map(|i| points[i]).collect(),
        orientation: members[0].orientation,
        source_id: members[0].source_id.clone(),
    }
}

/// Keeps segments whose arc length reaches `min_length`.
pub fn filter_by_shape(segments: &[EdgeSegment], policy: &ShapePolicy) -> Vec<EdgeSegment> {
    segments
        .iter()
        .filter(|s| arc_length(&s.points) >= policy.min_length)
        .cloned()
        .collect()
}

/// Settings for the image-to-candidates stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSettings {
    pub clahe: ClaheParams,
    pub edges: EdgeDetectParams,
    /// Raw chains shorter than this (pixels) are dropped before refinement.
    pub min_chain_length: usize,
    pub merge: MergePolicy,
    pub shape: ShapePolicy,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        Self {
            clahe: ClaheParams::default(),
            edges: EdgeDetectParams::default(),
            min_chain_length: 10,
            merge: MergePolicy::default(),
            shape: ShapePolicy::default(),
        }
    }
}

impl DetectionSettings {
    pub fn validate(&self) -> Result<()> {
        self.clahe.validate()?;
        self.edges.validate()?;
        self.merge.validate()?;
        if !(self.shape.min_length >= 0.0) {
            return Err(Error::InvalidParameter("min_length must be non-negative".into()));
        }
        Ok(())
    }
}

/// CLAHE, dual-pass edge detection, chaining, subpixel refinement, merging and
/// shape filtering. Horizontal-class segments come first.
pub fn detect_candidates(img: &GrayImage, settings: &DetectionSettings) -> Result<Vec<EdgeSegment>> {
    img.ensure_min_size()?;
    settings.validate()?;
    let equalized = clahe(img, &settings.clahe)?;
    let maps = detect_edges_dual(&equalized, &settings.edges)?;
    let mut out = Vec::new();
    for (map, class) in [
        (&maps.horizontal, OrientationClass::Horizontal),
        (&maps.vertical, OrientationClass::Vertical),
    ] {
        let refined: Vec<EdgeSegment> = chain_edges(map)
            .iter()
            .filter(|c| c.len() >= settings.min_chain_length.max(2))
            .filter_map(|c| c.to_segment(class))
            .map(|s| refine_subpixel(&s, &maps.gradients))
            .filter(|s| s.points.len() >= 2)
            .collect();
        let merged = merge_segments(&refined, &settings.merge);
        out.extend(filter_by_shape(&merged, &settings.shape));
    }
    Ok(out)
}
