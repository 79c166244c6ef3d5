//! JSON-over-HTTP review service over a dataset directory of images and
//! candidate segment files.
//!
//! Each segment carries an in-memory version counter. A status update must
//! quote the current version; stale updates get `409 Conflict`. Accepted
//! updates are written through to the segment file before the response.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use plumbline::chaining::OrientationClass;
use plumbline::dataset::{write_atomic, SegmentFile, SegmentStatus};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::commands::{image_id, list_segment_files};
use crate::CliError;

const INDEX_HTML: &str = "<!doctype html>\n<title>plumbline review</title>\n<p>No UI assets configured. API: <a href=\"/images\">/images</a>, <a href=\"/export\">/export</a>.</p>\n";

struct Entry {
    path: PathBuf,
    file: SegmentFile,
    versions: Vec<u64>,
}

pub struct AppState {
    root: PathBuf,
    entries: BTreeMap<String, Mutex<Entry>>,
}

impl AppState {
    /// Loads every segment file in `dataset`.
    pub fn load(dataset: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for path in list_segment_files(dataset)? {
            let file = SegmentFile::read(&path)?;
            let id = image_id(&file.image).to_string();
            let versions = vec![0; file.segments.len()];
            if entries.insert(id.clone(), Mutex::new(Entry { path, file, versions })).is_some() {
                return Err(CliError::Failed(format!("duplicate image id {id}")));
            }
        }
        Ok(Self {
            root: dataset.to_path_buf(),
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub candidate: usize,
    pub confirmed: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub index: usize,
    pub orientation: OrientationClass,
    pub status: SegmentStatus,
    pub version: u64,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSegments {
    pub id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<SegmentView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusUpdate {
    pub status: SegmentStatus,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub error: String,
    pub current: SegmentView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedFile {
    pub id: String,
    pub file_name: String,
    pub content: String,
}

fn view(entry: &Entry, index: usize) -> SegmentView {
    let rec = &entry.file.segments[index];
    SegmentView {
        index,
        orientation: rec.orientation,
        status: rec.status,
        version: entry.versions[index],
        points: rec.points.clone(),
    }
}

fn not_found(what: String) -> Response {
    (StatusCode::NOT_FOUND, Json(serde_json::json!({ "error": what }))).into_response()
}

type Shared = Arc<AppState>;

async fn list_images(State(state): State<Shared>) -> Json<Vec<ImageSummary>> {
    let mut out = Vec::new();
    for (id, entry) in &state.entries {
        let e = entry.lock().await;
        let count = |s| e.file.segments.iter().filter(|r| r.status == s).count();
        out.push(ImageSummary {
            id: id.clone(),
            image: e.file.image.clone(),
            width: e.file.width,
            height: e.file.height,
            candidate: count(SegmentStatus::Candidate),
            confirmed: count(SegmentStatus::Confirmed),
            rejected: count(SegmentStatus::Rejected),
        });
    }
    Json(out)
}

fn is_plain_relative(p: &Path) -> bool {
    p.components().all(|c| matches!(c, Component::Normal(_)))
}

async fn raw_image(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(entry) = state.entries.get(&id) else {
        return not_found(format!("no image {id}"));
    };
    let rel = PathBuf::from(&entry.lock().await.file.image);
    if !is_plain_relative(&rel) {
        return (StatusCode::FORBIDDEN, "image path leaves the dataset").into_response();
    }
    let mime = match rel.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(state.root.join(&rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => not_found(format!("image file for {id} is missing")),
    }
}

async fn get_segments(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(entry) = state.entries.get(&id) else {
        return not_found(format!("no image {id}"));
    };
    let e = entry.lock().await;
    Json(ImageSegments {
        id,
        image: e.file.image.clone(),
        width: e.file.width,
        height: e.file.height,
        segments: (0..e.file.segments.len()).map(|i| view(&e, i)).collect(),
    })
    .into_response()
}

async fn set_status(
    State(state): State<Shared>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    Json(update): Json<StatusUpdate>,
) -> Response {
    let Some(entry) = state.entries.get(&id) else {
        return not_found(format!("no image {id}"));
    };
    let mut e = entry.lock().await;
    if n >= e.file.segments.len() {
        return not_found(format!("image {id} has no segment {n}"));
    }
    if update.version != e.versions[n] {
        let body = Conflict {
            error: format!("stale version {}", update.version),
            current: view(&e, n),
        };
        return (StatusCode::CONFLICT, Json(body)).into_response();
    }
    let previous = e.file.segments[n].status;
    e.file.segments[n].status = update.status;
    if let Err(err) = write_atomic(&e.path, e.file.to_text().as_bytes()) {
        e.file.segments[n].status = previous;
        log::error!("writing {}: {err}", e.path.display());
        return (StatusCode::INTERNAL_SERVER_ERROR, err.to_string()).into_response();
    }
    e.versions[n] += 1;
    Json(view(&e, n)).into_response()
}

async fn export(State(state): State<Shared>) -> Json<Vec<ExportedFile>> {
    let mut out = Vec::new();
    for (id, entry) in &state.entries {
        let e = entry.lock().await;
        out.push(ExportedFile {
            id: id.clone(),
            file_name: e
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            content: e.file.confirmed_only().to_text(),
        });
    }
    Json(out)
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// API routes plus static assets from `assets`, or a placeholder page.
pub fn router(state: AppState, assets: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}/raw", get(raw_image))
        .route("/images/{id}/segments", get(get_segments))
        .route("/images/{id}/segments/{n}/status", put(set_status))
        .route("/export", get(export))
        .with_state(Arc::new(state));
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState, assets: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(state, assets.as_deref())).await
}
