//! Edge-pixel chaining and subpixel refinement.
//!
//! Chains are traced over mixed adjacency (4-neighbours always; a diagonal
//! neighbour only when no shared 4-neighbour is an edge pixel). This yields
//! the same connected sets as 8-adjacency but removes the redundant diagonal
//! links at stair steps, so a thin curve has exactly two neighbours per
//! interior pixel and only genuine junctions count as branch pixels.

use std::collections::HashSet;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::edge_detect::{Direction, EdgeMap, GradientField};
use crate::error::{Error, Result};

pub type Point = Point2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationClass {
    Horizontal,
    Vertical,
}

/// Ordered polyline of (possibly subpixel) edge positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSegment {
    pub points: Vec<Point>,
    pub orientation: OrientationClass,
    pub source_id: Option<String>,
}

impl EdgeSegment {
    pub fn new(points: Vec<Point>, orientation: OrientationClass) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: points.len(),
            });
        }
        Ok(Self {
            points,
            orientation,
            source_id: None,
        })
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point {
        self.points[0]
    }

    pub fn last(&self) -> Point {
        self.points[self.points.len() - 1]
    }

    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.points.reverse();
        out
    }
}

/// Integer-pixel chain produced by [`chain_edges`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelChain {
    pub pixels: Vec<(usize, usize)>,
}

impl PixelChain {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Converts to a segment; `None` for single-pixel chains.
    pub fn to_segment(&self, orientation: OrientationClass) -> Option<EdgeSegment> {
        let points = self
            .pixels
            .iter()
            .map(|&(x, y)| Point::new(x as f64, y as f64))
            .collect();
        EdgeSegment::new(points, orientation).ok()
    }
}

const NEIGHBOURS_4: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
const NEIGHBOURS_DIAG: [(isize, isize); 4] = [(1, 1), (-1, 1), (-1, -1), (1, -1)];

struct Adjacency<'a> {
    map: &'a EdgeMap,
}

impl Adjacency<'_> {
    fn edge(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.map.width()
            && (y as usize) < self.map.height()
            && self.map.is_edge(x as usize, y as usize)
    }

    /// Mixed-adjacency neighbours, 4-neighbours first.
    fn neighbours(&self, (x, y): (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (xi, yi) = (x as isize, y as isize);
        let four = NEIGHBOURS_4
            .iter()
            .filter(move |(dx, dy)| self.edge(xi + dx, yi + dy));
        let diag = NEIGHBOURS_DIAG.iter().filter(move |(dx, dy)| {
            self.edge(xi + dx, yi + dy) && !self.edge(xi + dx, yi) && !self.edge(xi, yi + dy)
        });
        four.chain(diag)
            .map(move |(dx, dy)| ((xi + dx) as usize, (yi + dy) as usize))
    }
}

/// Groups the edge pixels of one map into chains.
///
/// Every edge pixel lands in exactly one chain. Pixels with three or more
/// neighbours are junctions: the curves between junctions are traced first
/// (closed loops are cut at their first pixel in raster order), then junction
/// pixels are appended to adjacent chain ends, and leftover junction
/// clusters become chains of their own.
pub fn chain_edges(map: &EdgeMap) -> Vec<PixelChain> {
    let (w, h) = (map.width(), map.height());
    let adj = Adjacency { map };
    let idx = |(x, y): (usize, usize)| y * w + x;

    let mut branch = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if map.is_edge(x, y) {
                branch[idx((x, y))] = adj.neighbours((x, y)).count() >= 3;
            }
        }
    }

    let mut assigned = vec![false; w * h];
    let mut chains: Vec<Vec<(usize, usize)>> = Vec::new();

    // Walks from `start` through unassigned pixels accepted by `allow`.
    let trace = |start: (usize, usize), assigned: &mut Vec<bool>, allow: &dyn Fn(usize) -> bool| {
        assigned[idx(start)] = true;
        let mut forward = vec![start];
        let mut backward = Vec::new();
        for side in 0..2 {
            let mut cur = start;
            loop {
                let next = adj
                    .neighbours(cur)
                    .find(|&n| !assigned[idx(n)] && allow(idx(n)));
                match next {
                    Some(n) => {
                        assigned[idx(n)] = true;
                        if side == 0 {
                            forward.push(n);
                        } else {
                            backward.push(n);
                        }
                        cur = n;
                    }
                    None => break,
                }
            }
        }
        backward.reverse();
        backward.extend(forward);
        backward
    };

    for y in 0..h {
        for x in 0..w {
            let i = idx((x, y));
            if map.is_edge(x, y) && !branch[i] && !assigned[i] {
                chains.push(trace((x, y), &mut assigned, &|j| !branch[j]));
            }
        }
    }

    // Attach junction pixels to chain ends, one pixel per end per round.
    let junctions: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| map.is_edge(x, y) && branch[idx((x, y))])
        .collect();
    loop {
        let mut ends: std::collections::HashMap<usize, Vec<(usize, bool)>> = Default::default();
        for (ci, c) in chains.iter().enumerate() {
            ends.entry(idx(c[c.len() - 1])).or_default().push((ci, true));
            ends.entry(idx(c[0])).or_default().push((ci, false));
        }
        let mut claimed: HashSet<(usize, bool)> = HashSet::new();
        let mut progress = false;
        for &p in &junctions {
            if assigned[idx(p)] {
                continue;
            }
            let target = adj.neighbours(p).find_map(|n| {
                ends.get(&idx(n)).and_then(|list| {
                    list.iter()
                        .copied()
                        .filter(|e| !claimed.contains(e))
                        .min_by_key(|&(ci, tail)| (ci, !tail))
                })
            });
            if let Some((ci, tail)) = target {
                claimed.insert((ci, tail));
                if tail {
                    chains[ci].push(p);
                } else {
                    chains[ci].insert(0, p);
                }
                assigned[idx(p)] = true;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }

    for &p in &junctions {
        if !assigned[idx(p)] {
            chains.push(trace(p, &mut assigned, &|j| branch[j]));
        }
    }

    chains.into_iter().map(|pixels| PixelChain { pixels }).collect()
}

/// Parabola vertex offset through three samples, clamped to half a pixel.
/// Returns `None` when the curvature is degenerate.
pub fn parabola_offset(minus: f64, center: f64, plus: f64) -> Option<f64> {
    let denom = minus - 2.0 * center + plus;
    if denom.abs() <= 1e-12 {
        return None;
    }
    Some(((minus - plus) / (2.0 * denom)).clamp(-0.5, 0.5))
}

/// Moves each point along its quantized gradient direction to the vertex of
/// the parabola through the three gradient magnitudes across the edge.
///
/// Points whose 3x3 neighbourhood leaves the raster stay where they are.
pub fn refine_subpixel(seg: &EdgeSegment, field: &GradientField) -> EdgeSegment {
    let (w, h) = (field.width() as f64, field.height() as f64);
    let mut points: Vec<Point> = Vec::with_capacity(seg.points.len());
    for p in &seg.points {
        let (px, py) = (p.x.round(), p.y.round());
        let refined = if px < 1.0 || py < 1.0 || px > w - 2.0 || py > h - 2.0 {
            *p
        } else {
            let (x, y) = (px as isize, py as isize);
            let (dx, dy) = Direction::quantize(field.orientation_at(x as usize, y as usize)).step();
            let m0 = field.magnitude_or_zero(x, y);
            let mp = field.magnitude_or_zero(x + dx, y + dy);
            let mm = field.magnitude_or_zero(x - dx, y - dy);
            match parabola_offset(mm, m0, mp) {
                Some(t) => Point::new(px + t * dx as f64, py + t * dy as f64),
                None => *p,
            }
        };
        if points.last() != Some(&refined) {
            points.push(refined);
        }
    }
    EdgeSegment {
        points,
        orientation: seg.orientation,
        source_id: seg.source_id.clone(),
    }
}
