use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::json;

use super::{Invoker, InvokerError, RegisterRequest, ReplicaInstall};
use crate::api::ApiError;
use crate::rule::RuleError;
use crate::trigger::TriggerError;

/// Admin API:
///
/// - `POST /triggers` `{rule, functionUrl, partitions}` → 201 `{triggerId}`
/// - `GET /triggers`, `DELETE /triggers/{id}`
/// - `PUT|DELETE /replicas/{id}` (peer-to-peer replica installation)
/// - `GET /stats`
pub fn router(invoker: Arc<Invoker>) -> Router {
    Router::new()
        .route("/triggers", post(register).get(list))
        .route("/triggers/:id", axum::routing::delete(deregister))
        .route("/replicas/:id", put(install_replica).delete(drop_replica))
        .route("/stats", get(stats))
        .with_state(invoker)
}

impl From<InvokerError> for ApiError {
    fn from(e: InvokerError) -> Self {
        let message = e.to_string();
        match e {
            InvokerError::Rule(RuleError::Syntax { offset, .. }) => {
                let mut err = ApiError::new(StatusCode::BAD_REQUEST, "syntaxError", message);
                err.body.offset = Some(offset);
                err
            }
            InvokerError::Rule(RuleError::CaseExplosion { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, "caseExplosion", message)
            }
            InvokerError::InvalidFunctionUrl(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalidFunctionUrl", message)
            }
            InvokerError::InvalidPartitions { .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalidPartitions", message)
            }
            InvokerError::Trigger(TriggerError::DuplicateTriggerId(_)) => {
                ApiError::new(StatusCode::CONFLICT, "duplicateTriggerId", message)
            }
            InvokerError::Trigger(TriggerError::UnknownTrigger(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknownTrigger", message)
            }
            InvokerError::Trigger(TriggerError::UnknownEventType { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, "unknownEventType", message)
            }
            InvokerError::Trigger(TriggerError::Backpressure { .. }) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "backpressure", message)
            }
            InvokerError::Announce { .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "announceFailed", message)
            }
            InvokerError::Io(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

async fn register(
    State(invoker): State<Arc<Invoker>>,
    Json(req): Json<RegisterRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let trigger_id = invoker.register(req).await?;
    Ok((StatusCode::CREATED, Json(json!({ "triggerId": trigger_id }))))
}

async fn list(State(invoker): State<Arc<Invoker>>) -> impl IntoResponse {
    Json(invoker.list())
}

async fn deregister(
    State(invoker): State<Arc<Invoker>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(invoker.deregister(&id).await?))
}

async fn install_replica(
    State(invoker): State<Arc<Invoker>>,
    Path(id): Path<String>,
    Json(req): Json<ReplicaInstall>,
) -> Result<impl IntoResponse, ApiError> {
    invoker.install_replica(&id, req).await?;
    Ok((StatusCode::CREATED, Json(json!({ "triggerId": id }))))
}

async fn drop_replica(
    State(invoker): State<Arc<Invoker>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(invoker.drop_replica(&id).await?))
}

async fn stats(State(invoker): State<Arc<Invoker>>) -> impl IntoResponse {
    Json(invoker.totals())
}
