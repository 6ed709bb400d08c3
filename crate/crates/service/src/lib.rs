//! HTTP API for uploading scores, inspecting feature contributions and
//! shaping rendered performances.
//!
//! Sessions live in memory only and are lost on restart. Jacobians are
//! computed once at upload; a controls update only re-applies weights.

mod api;
mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::routing::{get, post};
use axum::Router;
use contempo_core::linearize::ReferenceMode;
use contempo_core::ModelBundle;
use tower_http::cors::{Any, CorsLayer};

pub use api::{ControlsRequest, ControlsResponse, NoteParams, StreamValues};
pub use error::ApiError;
pub use session::Session;

/// Shared server state: the loaded model and all open sessions.
pub struct AppState {
    model: Arc<ModelBundle>,
    reference: ReferenceMode,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(model: ModelBundle) -> Self {
        Self::with_reference(model, ReferenceMode::default())
    }

    pub fn with_reference(model: ModelBundle, reference: ReferenceMode) -> Self {
        Self { model: Arc::new(model), reference, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }

    fn fresh_id(&self) -> String {
        format!("p{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no piece with id {id:?}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/pieces", post(api::upload).get(api::list))
        .route("/api/pieces/{id}/features", get(api::features))
        .route("/api/pieces/{id}/contributions", get(api::contributions))
        .route("/api/pieces/{id}/controls", post(api::controls).get(api::current_controls))
        .route("/api/pieces/{id}/render.mid", get(api::render_midi))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
