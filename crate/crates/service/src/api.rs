//! Routes and handlers.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use xfr_core::pipeline::PipelineInfo;
use xfr_core::qa::AnswerSource;
use xfr_core::{Decision, ExplainabilityTable, FaceImage, Pipeline, SaliencyMethod, VerificationRecord};

use crate::clock::Clock;
use crate::error::ApiError;
use crate::store::{new_session_id, Lookup, Session, SessionData, SessionStore, StoreError, Turn};

pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;
pub const MAX_QUESTION_CHARS: usize = 512;
pub const DEFAULT_TTL_S: u64 = 3600;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Arc<dyn SessionStore>,
    pub clock: Arc<dyn Clock>,
    pub ttl_s: u64,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/verify", post(verify))
        .route("/v1/sessions/{id}", get(summary))
        .route("/v1/sessions/{id}/ask", post(ask))
        .route("/v1/sessions/{id}/heatmaps/{file}", get(heatmap))
        // both images plus multipart framing
        .layer(DefaultBodyLimit::max(2 * MAX_IMAGE_BYTES + 64 * 1024))
        .with_state(state)
}

pub fn heatmap_urls(id: &str) -> BTreeMap<String, String> {
    SaliencyMethod::ALL
        .iter()
        .map(|m| (m.code().to_string(), format!("/v1/sessions/{id}/heatmaps/{}.png", m.code())))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub pipeline: PipelineInfo,
    pub sessions: usize,
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        pipeline: st.pipeline.info(),
        sessions: st.store.len(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub session_id: String,
    pub pair_id: String,
    pub score: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub confidence: f64,
    pub table: ExplainabilityTable,
    pub heatmap_urls: BTreeMap<String, String>,
}

async fn read_images(mut mp: Multipart) -> Result<(FaceImage, FaceImage), ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(status, "IMAGE_TOO_LARGE", "upload exceeds the size limit")
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "INVALID_MULTIPART", e.body_text())
        }
    };
    let (mut a, mut b) = (None, None);
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        let part: &'static str = match field.name() {
            Some("image_a") => "image_a",
            Some("image_b") => "image_b",
            _ => continue,
        };
        let source = field.file_name().map(str::to_string).unwrap_or_else(|| part.to_string());
        let bytes = field.bytes().await.map_err(bad)?;
        if bytes.len() > MAX_IMAGE_BYTES {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "IMAGE_TOO_LARGE",
                format!("{part} is {} bytes, limit {MAX_IMAGE_BYTES}", bytes.len()),
            )
            .for_image(part));
        }
        let img = FaceImage::decode(&bytes, source)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_IMAGE", format!("{part}: {e}")).for_image(part))?;
        if part == "image_a" {
            a = Some(img);
        } else {
            b = Some(img);
        }
    }
    match (a, b) {
        (Some(a), Some(b)) => Ok((a, b)),
        (None, _) => Err(ApiError::new(StatusCode::BAD_REQUEST, "MISSING_PART", "missing part image_a").for_image("image_a")),
        (_, None) => Err(ApiError::new(StatusCode::BAD_REQUEST, "MISSING_PART", "missing part image_b").for_image("image_b")),
    }
}

async fn verify(State(st): State<AppState>, mp: Result<Multipart, MultipartRejection>) -> Result<Response, ApiError> {
    let mp = mp.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_MULTIPART", e.body_text()))?;
    let (a, b) = read_images(mp).await?;
    let pipeline = st.pipeline.clone();
    let explained = tokio::task::spawn_blocking(move || pipeline.run(&a, &b))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let data = Arc::new(SessionData::from(explained));
    let session = loop {
        let s = Session::new(new_session_id(), data.clone(), st.clock.now_ms(), st.ttl_s);
        match st.store.insert(s) {
            Ok(s) => break s,
            Err(StoreError::Collision(_)) => continue,
        }
    };
    let r = &session.data.record;
    let body = VerifyResponse {
        session_id: session.id.clone(),
        pair_id: r.pair_id.clone(),
        score: r.score,
        threshold: r.threshold,
        decision: r.decision,
        confidence: r.pic,
        table: session.data.table.clone(),
        heatmap_urls: heatmap_urls(&session.id),
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn lookup(st: &AppState, id: &str) -> Result<Arc<Session>, ApiError> {
    match st.store.get(id) {
        Lookup::Live(s) => Ok(s),
        Lookup::Expired => Err(ApiError::session_expired(id)),
        Lookup::Missing => Err(ApiError::session_not_found(id)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AskResponse {
    /// 1-based position of this turn in the session's log.
    pub turn: usize,
    pub answer: String,
    pub confidence: f64,
    pub used_subcontext: bool,
    pub subcontext_sentences: Vec<String>,
    pub source: AnswerSource,
    pub latency_ms: f64,
}

async fn ask(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Json<AskResponse>, ApiError> {
    // asks report unknown and expired sessions alike; reads distinguish them
    let session = match st.store.get(&id) {
        Lookup::Live(s) => s,
        Lookup::Expired | Lookup::Missing => return Err(ApiError::session_not_found(&id)),
    };
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_JSON", e.body_text()))?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "EMPTY_QUESTION", "question is empty"));
    }
    let n = req.question.chars().count();
    if n > MAX_QUESTION_CHARS {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "QUESTION_TOO_LONG",
            format!("question has {n} characters, limit {MAX_QUESTION_CHARS}"),
        ));
    }
    let mut turns = session.turns.lock().await;
    let (pipeline, s, q) = (st.pipeline.clone(), session.clone(), req.question.clone());
    let result = tokio::task::spawn_blocking(move || pipeline.qa.ask(&q, &s.data.context))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    turns.push(Turn {
        question: req.question,
        result: result.clone(),
    });
    Ok(Json(AskResponse {
        turn: turns.len(),
        answer: result.answer,
        confidence: result.confidence,
        used_subcontext: result.used_subcontext,
        subcontext_sentences: result.subcontext_sentences,
        source: result.source,
        latency_ms: result.latency_ms,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnView {
    pub question: String,
    pub answer: String,
    pub confidence: f64,
    pub used_subcontext: bool,
    pub source: AnswerSource,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub record: VerificationRecord,
    pub table: ExplainabilityTable,
    pub context_sentences: usize,
    pub turn_count: usize,
    pub turns: Vec<TurnView>,
    pub created_at_ms: u64,
    pub last_access_ms: u64,
    pub expires_at_ms: u64,
    pub ttl_s: u64,
    pub heatmap_urls: BTreeMap<String, String>,
}

async fn summary(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    let s = lookup(&st, &id)?;
    let turns = s.turns.lock().await;
    Ok(Json(SessionSummary {
        session_id: s.id.clone(),
        record: s.data.record.clone(),
        table: s.data.table.clone(),
        context_sentences: s.data.context.sentences.len(),
        turn_count: turns.len(),
        turns: turns
            .iter()
            .map(|t| TurnView {
                question: t.question.clone(),
                answer: t.result.answer.clone(),
                confidence: t.result.confidence,
                used_subcontext: t.result.used_subcontext,
                source: t.result.source,
            })
            .collect(),
        created_at_ms: s.created_at_ms,
        last_access_ms: s.last_access_ms(),
        expires_at_ms: s.expires_at_ms(),
        ttl_s: s.ttl_s,
        heatmap_urls: heatmap_urls(&s.id),
    }))
}

async fn heatmap(State(st): State<AppState>, Path((id, file)): Path<(String, String)>) -> Result<Response, ApiError> {
    let s = lookup(&st, &id)?;
    let method = file
        .strip_suffix(".png")
        .and_then(|code| code.parse::<SaliencyMethod>().ok())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_METHOD", format!("no heatmap {file:?}")))?;
    let png = s.heatmap_png(method).to_vec();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
