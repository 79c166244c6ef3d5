//! Segment files: one image per file, line-oriented JSON.
//!
//! The first line is a header `{"schema_version":1,"image":..,"width":..,"height":..}`,
//! followed by one line per segment
//! `{"orientation":"horizontal","status":"candidate","points":[[x,y],..]}`.
//! Coordinates are written with exactly three decimals.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chaining::{EdgeSegment, OrientationClass, Point};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentStatus {
    Candidate,
    Confirmed,
    Rejected,
}

/// Rounds to the stored precision; `-0.0` becomes `0.0`.
pub fn quantize(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0 + 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub orientation: OrientationClass,
    pub status: SegmentStatus,
    pub points: Vec<[f64; 2]>,
}

impl SegmentRecord {
    pub fn from_segment(seg: &EdgeSegment, status: SegmentStatus) -> Self {
        Self {
            orientation: seg.orientation,
            status,
            points: seg.points.iter().map(|p| [quantize(p.x), quantize(p.y)]).collect(),
        }
    }

    pub fn to_segment(&self, source: Option<&str>) -> Result<EdgeSegment> {
        let pts = self.points.iter().map(|[x, y]| Point::new(*x, *y)).collect();
        let seg = EdgeSegment::new(pts, self.orientation)?;
        Ok(match source {
            Some(id) => seg.with_source(id),
            None => seg,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    image: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFile {
    /// Image path relative to the dataset root; doubles as the image id.
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<SegmentRecord>,
}

impl SegmentFile {
    pub fn new(image: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image: image.into(),
            width,
            height,
            segments: Vec::new(),
        }
    }

    pub fn from_segments(
        image: impl Into<String>,
        width: u32,
        height: u32,
        segments: &[EdgeSegment],
        status: SegmentStatus,
    ) -> Self {
        Self {
            segments: segments.iter().map(|s| SegmentRecord::from_segment(s, status)).collect(),
            ..Self::new(image, width, height)
        }
    }

    /// Segments with the given status, tagged with the image id.
    pub fn edge_segments(&self, status: Option<SegmentStatus>) -> Result<Vec<EdgeSegment>> {
        self.segments
            .iter()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .map(|r| r.to_segment(Some(&self.image)))
            .collect()
    }

    /// Copy keeping only confirmed segments.
    pub fn confirmed_only(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .filter(|r| r.status == SegmentStatus::Confirmed)
                .cloned()
                .collect(),
            ..Self::new(self.image.clone(), self.width, self.height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Format(format!("{}: zero image dimension", self.image)));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.points.len() < 2 {
                return Err(Error::Format(format!("{}: segment {i} has fewer than 2 points", self.image)));
            }
            if let Some([x, y]) = seg
                .points
                .iter()
                .find(|[x, y]| !(x.is_finite() && y.is_finite() && (-1.0..=w).contains(x) && (-1.0..=h).contains(y)))
            {
                return Err(Error::Format(format!(
                    "{}: segment {i} point ({x}, {y}) outside the image",
                    self.image
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            image: self.image.clone(),
            width: self.width,
            height: self.height,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for seg in &self.segments {
            let orientation = serde_json::to_string(&seg.orientation).expect("enum serializes");
            let status = serde_json::to_string(&seg.status).expect("enum serializes");
            let _ = write!(out, "{{\"orientation\":{orientation},\"status\":{status},\"points\":[");
            for (i, [x, y]) in seg.points.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "[{:.3},{:.3}]", quantize(*x), quantize(*y));
            }
            out.push_str("]}\n");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty segment file".into()))?)
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported schema version {}", header.schema_version)));
        }
        let segments = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("segment {i}: {e}"))))
            .collect::<Result<_>>()?;
        let file = Self {
            image: header.image,
            width: header.width,
            height: header.height,
            segments,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SegmentFile {
        SegmentFile {
            image: "kitti/0001.png".into(),
            width: 64,
            height: 48,
            segments: vec![
                SegmentRecord {
                    orientation: OrientationClass::Horizontal,
                    status: SegmentStatus::Candidate,
                    points: vec![[1.0, 2.5], [10.125, 3.0]],
                },
                SegmentRecord {
                    orientation: OrientationClass::Vertical,
                    status: SegmentStatus::Confirmed,
                    points: vec![[-1.0, 0.0], [64.0, 48.0]],
                },
            ],
        }
    }

    #[test]
    fn text_layout() {
        let text = sample().to_text();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], r#"{"schema_version":1,"image":"kitti/0001.png","width":64,"height":48}"#);
        assert_eq!(
            lines[1],
            r#"{"orientation":"horizontal","status":"candidate","points":[[1.000,2.500],[10.125,3.000]]}"#
        );
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn empty_segment_list() {
        let f = SegmentFile::new("blank.png", 512, 512);
        assert_eq!(SegmentFile::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn rejects_bad_files() {
        let mut f = sample();
        f.segments[0].points[1] = [64.5, 3.0];
        assert!(matches!(f.validate(), Err(Error::Format(_))));
        let text = sample().to_text().replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(SegmentFile::parse(&text).is_err());
        let text = sample().to_text().replace("\"status\":\"candidate\"", "\"status\":\"maybe\"");
        assert!(SegmentFile::parse(&text).is_err());
        assert!(SegmentFile::parse("").is_err());
    }

    #[test]
    fn confirmed_filter() {
        let f = sample().confirmed_only();
        assert_eq!(f.segments.len(), 1);
        assert_eq!(f.segments[0].status, SegmentStatus::Confirmed);
        let segs = sample().edge_segments(Some(SegmentStatus::Confirmed)).unwrap();
        assert_eq!(segs[0].source_id.as_deref(), Some("kitti/0001.png"));
    }

    #[test]
    fn atomic_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        sample().write(&path).unwrap();
        assert_eq!(SegmentFile::read(&path).unwrap(), sample());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    fn record() -> impl Strategy<Value = SegmentRecord> {
        (
            prop_oneof![Just(OrientationClass::Horizontal), Just(OrientationClass::Vertical)],
            prop_oneof![
                Just(SegmentStatus::Candidate),
                Just(SegmentStatus::Confirmed),
                Just(SegmentStatus::Rejected)
            ],
            proptest::collection::vec((-1.0..640.0f64, -1.0..480.0f64), 2..30),
        )
            .prop_map(|(orientation, status, pts)| SegmentRecord {
                orientation,
                status,
                points: pts.into_iter().map(|(x, y)| [quantize(x), quantize(y)]).collect(),
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(segments in proptest::collection::vec(record(), 0..8)) {
            let f = SegmentFile { image: "dir/img.png".into(), width: 640, height: 480, segments };
            let text = f.to_text();
            let back = SegmentFile::parse(&text).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
