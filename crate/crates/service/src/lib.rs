//! Local JSON API for the labeling workflow: segments with historical
//! overlays, persistent labels, model suggestions and the labeling queue.

mod routes;
mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use atk_core::data::DailySegment;
use atk_core::pipeline::Detector;
use tokio::sync::{Mutex, OnceCell};

pub use routes::{router, SegmentPayload, SegmentSummary, SuggestionRecord};
pub use store::{AuditEntry, LabelStore};

pub const DEFAULT_PORT: u16 = 8787;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] atk_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("duplicate segment id {0:?}")]
    DuplicateSegment(String),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Segment `ids` in order, followed by the first ⌈N/5⌉ of them again.
pub fn label_queue(ids: &[String]) -> Vec<String> {
    let repeat = ids.len().div_ceil(5);
    ids.iter().chain(&ids[..repeat]).cloned().collect()
}

pub struct ServiceConfig {
    pub segments: Vec<DailySegment>,
    pub labels_path: PathBuf,
    pub audit_path: PathBuf,
    pub detector: Option<Detector>,
    pub ui_dir: Option<PathBuf>,
}

/// (weights id, segment id)
type CacheKey = (String, String);

pub struct AppState {
    /// Date-sorted.
    pub(crate) segments: Vec<DailySegment>,
    pub(crate) index: HashMap<String, usize>,
    pub(crate) store: Mutex<LabelStore>,
    pub(crate) detector: Option<Arc<Detector>>,
    pub(crate) suggestions: Mutex<HashMap<CacheKey, Arc<OnceCell<String>>>>,
    pub(crate) ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self> {
        let mut segments = config.segments;
        segments.sort_by(|a, b| (a.date, &a.segment_id).cmp(&(b.date, &b.segment_id)));
        let mut index = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            s.validate()?;
            if index.insert(s.segment_id.clone(), i).is_some() {
                return Err(ServiceError::DuplicateSegment(s.segment_id.clone()));
            }
        }
        Ok(AppState {
            segments,
            index,
            store: Mutex::new(LabelStore::open(&config.labels_path, &config.audit_path)?),
            detector: config.detector.map(Arc::new),
            suggestions: Mutex::new(HashMap::new()),
            ui_dir: config.ui_dir,
        })
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(shutdown)
        .await
}
