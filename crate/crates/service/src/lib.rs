//! HTTP API over the explainable face verification pipeline.
//!
//! `POST /v1/verify` runs the full pipeline on an uploaded pair and opens
//! a session; `/v1/sessions/{id}` endpoints then serve the summary, the
//! overlay heatmaps and question answering on that session.

pub mod api;
pub mod clock;
pub mod error;
pub mod store;

use std::sync::Arc;
use std::time::Duration;

pub use api::{router, AppState, DEFAULT_TTL_S, MAX_IMAGE_BYTES, MAX_QUESTION_CHARS};
pub use clock::{Clock, ManualClock, SystemClock};
pub use error::ApiError;
pub use store::{InMemoryStore, Lookup, Session, SessionStore};

use xfr_core::backend::BackendRegistry;
use xfr_core::config::ConfigError;
use xfr_core::{Pipeline, ServiceConfig};

/// How often the background task drops expired sessions.
pub const PURGE_INTERVAL: Duration = Duration::from_secs(30);

impl AppState {
    /// In-memory sessions on the system clock.
    pub fn new(pipeline: Pipeline, ttl_s: u64) -> Self {
        Self::with_clock(pipeline, ttl_s, Arc::new(SystemClock))
    }

    pub fn with_clock(pipeline: Pipeline, ttl_s: u64, clock: Arc<dyn Clock>) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            store: Arc::new(InMemoryStore::new(clock.clone())),
            clock,
            ttl_s,
        }
    }

    /// Resolves all backend names before anything listens.
    pub fn from_config(config: &ServiceConfig, registry: &BackendRegistry) -> Result<Self, ConfigError> {
        Ok(Self::new(config.build_pipeline(registry)?, config.ttl_s))
    }
}

/// Serves until the listener fails, purging expired sessions in the
/// background.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let store = state.store.clone();
    let purger = tokio::spawn(async move {
        let mut tick = tokio::time::interval(PURGE_INTERVAL);
        loop {
            tick.tick().await;
            store.purge_expired();
        }
    });
    let result = axum::serve(listener, router(state)).await;
    purger.abort();
    result
}
