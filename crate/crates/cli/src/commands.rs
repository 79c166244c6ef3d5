//! The batch subcommands. Images are processed on the rayon pool; results
//! are collected in input order so output files do not depend on scheduling.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use plumbline::chaining::{EdgeSegment, OrientationClass};
use plumbline::dataset::{write_atomic, SegmentFile, SegmentStatus};
use plumbline::distortion::{estimate_distortion, filter_straight, DistortionParams};
use plumbline::evaluation::{aggregate_reports, match_segments, render_overlay, EvalReport, GroundTruthSet};
use plumbline::imaging::GrayImage;
use plumbline::segments::detect_candidates;
use plumbline::synth::{calibration_scene, distorted_line, render_rectangles};
use plumbline::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{CliError, PipelineConfig, SEGMENT_SUFFIX};

/// Image id: the file name without its extension.
pub fn image_id(image: &str) -> &str {
    let name = image.rsplit(['/', '\\']).next().unwrap_or(image);
    name.rsplit_once('.').map_or(name, |(stem, _)| stem)
}

pub fn segment_file_name(image: &str) -> String {
    format!("{}{SEGMENT_SUFFIX}", image_id(image))
}

/// Segment files directly inside `dir`, sorted by name.
pub fn list_segment_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.to_string_lossy().ends_with(SEGMENT_SUFFIX))
        .collect();
    files.sort();
    Ok(files)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Candidate detection followed, when enabled, by the per-image distortion
/// filter. Images with too few candidates for a fit keep all of them.
pub fn detect_segments(img: &GrayImage, cfg: &PipelineConfig) -> plumbline::Result<Vec<EdgeSegment>> {
    let candidates = detect_candidates(img, &cfg.detection)?;
    if !cfg.distortion_filter || candidates.len() < cfg.msac.sample_size {
        return Ok(candidates);
    }
    let base = DistortionParams::identity(img.width() as u32, img.height() as u32);
    match estimate_distortion(&candidates, &base, &cfg.msac, &cfg.model) {
        Ok(res) => Ok(filter_straight(&candidates, &res)),
        Err(Error::InsufficientSegments { .. } | Error::CalibrationUnavailable { .. }) => Ok(candidates),
        Err(e) => Err(e),
    }
}

pub fn detect_file(image_path: &Path, cfg: &PipelineConfig) -> plumbline::Result<SegmentFile> {
    let img = GrayImage::open(image_path)?;
    let segments = detect_segments(&img, cfg)?;
    let name = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SegmentFile::from_segments(
        name,
        img.width() as u32,
        img.height() as u32,
        &segments,
        SegmentStatus::Candidate,
    ))
}

/// Writes one candidate segment file per image into `out_dir`. Unreadable
/// images are skipped with a warning; it is an error when all fail.
pub fn cmd_detect(images: &[PathBuf], out_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(CliError::Failed("no input images".into()));
    }
    let mut seen = HashSet::new();
    for p in images {
        let id = image_id(&p.to_string_lossy()).to_string();
        if !seen.insert(id.clone()) {
            return Err(CliError::Failed(format!("two inputs share the image id {id}")));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<_> = images
        .par_iter()
        .map(|p| {
            let file = detect_file(p, cfg)?;
            let out = out_dir.join(segment_file_name(&file.image));
            file.write(&out)?;
            Ok::<_, plumbline::Error>(out)
        })
        .collect();
    let mut written = Vec::new();
    for (path, res) in images.iter().zip(results) {
        match res {
            Ok(out) => written.push(out),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if written.is_empty() {
        return Err(CliError::Failed("no image could be processed".into()));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCalibration {
    pub image: String,
    /// Segments of this image that took part (all but rejected ones).
    pub segments: usize,
    /// Inlier positions within the image's segment file.
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: DistortionParams,
    pub msac_score: f64,
    pub iterations: usize,
    pub segments: usize,
    pub inliers: usize,
    pub images: Vec<ImageCalibration>,
}

/// Pooled distortion estimate over the non-rejected segments of all files.
pub fn cmd_calibrate(files: &[PathBuf], cfg: &PipelineConfig) -> Result<CalibrationReport, CliError> {
    cfg.validate()?;
    let loaded = files
        .par_iter()
        .map(SegmentFile::read)
        .collect::<plumbline::Result<Vec<_>>>()?;
    let Some(first) = loaded.first() else {
        return Err(CliError::InsufficientSegments("no segment files".into()));
    };
    let (w, h) = (first.width, first.height);
    if let Some(other) = loaded.iter().find(|f| (f.width, f.height) != (w, h)) {
        return Err(CliError::Failed(format!(
            "{} is {}x{} but {} is {w}x{h}; pooled calibration needs one image size",
            other.image, other.width, other.height, first.image
        )));
    }

    let mut pooled = Vec::new();
    let mut origin = Vec::new();
    for (fi, file) in loaded.iter().enumerate() {
        for (si, rec) in file.segments.iter().enumerate() {
            if rec.status != SegmentStatus::Rejected {
                pooled.push(rec.to_segment(Some(&file.image))?);
                origin.push((fi, si));
            }
        }
    }
    let result = estimate_distortion(&pooled, &DistortionParams::identity(w, h), &cfg.msac, &cfg.model).map_err(
        |e| match e {
            Error::InsufficientSegments { .. } | Error::CalibrationUnavailable { .. } => {
                CliError::InsufficientSegments(e.to_string())
            }
            other => CliError::Core(other),
        },
    )?;

    let mut images: Vec<ImageCalibration> = loaded
        .iter()
        .map(|f| ImageCalibration {
            image: f.image.clone(),
            segments: f.segments.iter().filter(|r| r.status != SegmentStatus::Rejected).count(),
            inliers: Vec::new(),
        })
        .collect();
    for &i in &result.inliers {
        let (fi, si) = origin[i];
        images[fi].inliers.push(si);
    }
    Ok(CalibrationReport {
        params: result.params,
        msac_score: result.msac_score,
        iterations: result.iterations,
        segments: pooled.len(),
        inliers: result.inliers.len(),
        images,
    })
}

/// Matches each detected file against the truth file at the same position.
/// Writes `<id>.eval.json`, `<id>.overlay.png` (when the image is found under
/// `image_root`, default the truth file's directory) and `aggregate.json`.
pub fn cmd_eval(
    detected: &[PathBuf],
    truth: &[PathBuf],
    image_root: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    if detected.len() != truth.len() {
        return Err(CliError::IdMismatch(format!(
            "{} detected files but {} truth files",
            detected.len(),
            truth.len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let reports = detected
        .par_iter()
        .zip(truth)
        .map(|(d, t)| eval_pair(d, t, image_root, out_dir, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate_reports(&reports);
    write_json(&out_dir.join("aggregate.json"), &aggregate)?;
    Ok(aggregate)
}

fn eval_pair(
    detected: &Path,
    truth: &Path,
    image_root: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<EvalReport, CliError> {
    let det_file = SegmentFile::read(detected)?;
    let truth_file = SegmentFile::read(truth)?;
    if det_file.image != truth_file.image {
        return Err(CliError::IdMismatch(format!(
            "{} describes {} but {} describes {}",
            detected.display(),
            det_file.image,
            truth.display(),
            truth_file.image
        )));
    }
    let gt = GroundTruthSet::from_segment_file(&truth_file)?;
    let det = det_file.edge_segments(None)?;
    let report = match_segments(&det_file.image, &det, &gt, &cfg.matching)?;
    let id = image_id(&det_file.image);
    write_json(&out_dir.join(format!("{id}.eval.json")), &report)?;

    let root = image_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| truth.parent().map(Path::to_path_buf).unwrap_or_default());
    let image_path = root.join(&truth_file.image);
    match GrayImage::open(&image_path) {
        Ok(img) => render_overlay(&img, &report, &det, &gt).save_png(out_dir.join(format!("{id}.overlay.png")))?,
        Err(e) => log::warn!("no overlay for {}: {e}", det_file.image),
    }
    Ok(report)
}

/// Confirmed-only copies of every segment file in `dataset`.
pub fn cmd_export(dataset: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for path in list_segment_files(dataset)? {
        let file = SegmentFile::read(&path)?;
        let out = out_dir.join(path.file_name().expect("listed files have names"));
        write_atomic(&out, file.confirmed_only().to_text().as_bytes())?;
        written.push(out);
    }
    Ok(written)
}

/// Renders the built-in rectangle scene through `params`, writing
/// `scene.png` and its confirmed ground truth `truth/scene.segments.jsonl`.
pub fn cmd_synth(out_dir: &Path, params: &DistortionParams) -> Result<(PathBuf, PathBuf), CliError> {
    params.validate()?;
    std::fs::create_dir_all(out_dir.join("truth"))?;
    let img = render_rectangles(params, &calibration_scene(), 40.0, 200.0, 4);
    let image_path = out_dir.join("scene.png");
    img.save_png(&image_path)?;
    let truth: Vec<EdgeSegment> = calibration_scene()
        .iter()
        .flat_map(|r| r.sides())
        .map(|(line, class): (_, OrientationClass)| distorted_line(&line, params, 1.0, class))
        .collect();
    let file = SegmentFile::from_segments("scene.png", params.image_width, params.image_height, &truth, SegmentStatus::Confirmed);
    let truth_path = out_dir.join("truth").join(segment_file_name("scene.png"));
    file.write(&truth_path)?;
    Ok((image_path, truth_path))
}
