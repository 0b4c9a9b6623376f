//! HTTP API consumed by the annotation UI.
//!
//! - `GET /api/tasks/next?annotator=ID` next tweet this annotator has not
//!   labeled, or `204 No Content` once the queue is exhausted
//! - `POST /api/labels` with `{tweet_id, annotator_id, label}`
//! - `GET /api/agreement` kappa over the current snapshot
//! - `GET /api/progress` live label counts per annotator

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::{agreement_pipeline, progress, AgreementReport, AnnotationStore};
use crate::corpus::{Corpus, Label, Language};

/// Label definitions shown beside every task.
pub const GUIDELINES: &str = "Hateful: hostile, aggressive or abusive content, such as insults, slurs, \
threats, mockery or sarcasm aimed at people because of race, religion, ethnicity or other group \
membership.\nNot-Hateful: neutral, positive or indifferent content without abusive intent, \
including frustration or criticism that does not target a group.";

pub struct ServiceState {
    pub store: Arc<AnnotationStore>,
    pub corpus: Corpus,
    pub annotators_per_item: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub id: String,
    pub text: String,
    pub language: Language,
    pub guidelines: String,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    tweet_id: String,
    annotator_id: String,
    label: String,
}

#[derive(Debug, Serialize)]
struct AgreementBody {
    #[serde(flatten)]
    report: AgreementReport,
    interpretation_label: &'static str,
    ties: usize,
    excluded_items: usize,
    labeled_items: usize,
}

#[derive(Debug, Serialize)]
struct ProgressBody {
    annotators: BTreeMap<String, usize>,
    items: usize,
    complete_items: usize,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn next_task(State(state): State<Arc<ServiceState>>, Query(q): Query<NextQuery>) -> Response {
    if q.annotator.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "annotator id is empty");
    }
    let next = state
        .corpus
        .tweets
        .iter()
        .find(|t| !state.store.has_labeled(&t.id, &q.annotator));
    match next {
        Some(t) => Json(TaskView {
            id: t.id.clone(),
            text: t.text.clone(),
            language: t.language,
            guidelines: GUIDELINES.to_string(),
        })
        .into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit_label(State(state): State<Arc<ServiceState>>, Json(body): Json<LabelBody>) -> Response {
    let label: Label = match body.label.parse() {
        Ok(l) => l,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if body.annotator_id.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "annotator id is empty");
    }
    if !state.corpus.tweets.iter().any(|t| t.id == body.tweet_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown tweet `{}`", body.tweet_id));
    }
    let store = Arc::clone(&state.store);
    let result = tokio::task::spawn_blocking(move || store.submit(&body.tweet_id, &body.annotator_id, label)).await;
    match result {
        Ok(Ok(record)) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn agreement(State(state): State<Arc<ServiceState>>) -> Response {
    let snapshot = state.store.snapshot();
    match agreement_pipeline(&snapshot, state.annotators_per_item) {
        Ok(outcome) => Json(AgreementBody {
            interpretation_label: outcome.report.interpretation.label(),
            ties: outcome.ties(),
            excluded_items: outcome.excluded.len(),
            labeled_items: outcome.report.items,
            report: outcome.report,
        })
        .into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn progress_handler(State(state): State<Arc<ServiceState>>) -> Response {
    let snapshot = state.store.snapshot();
    let mut per_item: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &snapshot {
        *per_item.entry(r.tweet_id.as_str()).or_default() += 1;
    }
    let complete = per_item.values().filter(|&&c| c >= state.annotators_per_item).count();
    Json(ProgressBody {
        annotators: progress(&snapshot),
        items: state.corpus.len(),
        complete_items: complete,
    })
    .into_response()
}

/// Builds the API router. When `assets` is given, files under it are served
/// for every path outside `/api`.
pub fn router(state: Arc<ServiceState>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/labels", post(submit_label))
        .route("/api/agreement", get(agreement))
        .route("/api/progress", get(progress_handler))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
