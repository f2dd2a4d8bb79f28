//! HTTP+JSON front end over [`EvalService`].

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::hits::Placement;
use crate::quality::RatingAnswer;
use crate::service::{AssignOutcome, EvalService};
use crate::Error;

type Shared = Arc<EvalService>;

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = match &self {
            Error::UnknownAssignment(_) => StatusCode::NOT_FOUND,
            Error::AlreadyAnswered(_) => StatusCode::CONFLICT,
            Error::WrongWorker { .. } => StatusCode::FORBIDDEN,
            Error::InvalidAnswer(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct WorkerQuery {
    #[serde(default)]
    worker: String,
}

async fn task(State(svc): State<Shared>, Query(q): Query<WorkerQuery>) -> Result<Response, Error> {
    Ok(match svc.next_task(&q.worker)? {
        AssignOutcome::Offer(view) => Json(view).into_response(),
        AssignOutcome::NoneAvailable => {
            (StatusCode::NOT_FOUND, Json(json!({ "status": "none_available" }))).into_response()
        }
        AssignOutcome::Refused(reason) => {
            (StatusCode::FORBIDDEN, Json(json!({ "status": "refused", "reason": reason }))).into_response()
        }
    })
}

async fn answer(State(svc): State<Shared>, Json(a): Json<RatingAnswer>) -> Result<Response, Error> {
    Ok(Json(svc.submit(a)?).into_response())
}

#[derive(Deserialize)]
struct BonusCheck {
    assignment_id: String,
    placements: Vec<BTreeMap<String, Placement>>,
}

async fn bonus_check(State(svc): State<Shared>, Json(b): Json<BonusCheck>) -> Result<Response, Error> {
    Ok(Json(svc.bonus_check(&b.assignment_id, &b.placements)?).into_response())
}

async fn admin_aggregate(State(svc): State<Shared>) -> Response {
    Json(svc.aggregate()).into_response()
}

async fn admin_export(State(svc): State<Shared>) -> Result<Response, Error> {
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], svc.export()?).into_response())
}

async fn admin_report(State(svc): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], svc.report()).into_response()
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/task", get(task))
        .route("/answer", post(answer))
        .route("/bonus-check", post(bonus_check))
        .route("/admin/aggregate", get(admin_aggregate))
        .route("/admin/export", get(admin_export))
        .route("/admin/report", get(admin_report))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("evaluation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
