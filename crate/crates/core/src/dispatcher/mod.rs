//! Dispatcher: stateless ingestion tier.
//!
//! Producers POST events; the dispatcher assigns an id, looks up the triggers
//! subscribed to the event's type and forwards the event to exactly one
//! replica of each, picked round-robin per (type, trigger). The HTTP response
//! is sent once every forwarded frame has been acknowledged by its invoker,
//! that is after ingest but never after function execution.

mod forward;
mod table;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use crate::api::ApiError;
use crate::event::{now_ns, EventIdGenerator, WireEvent};
use crate::invoker::SubscriptionAnnounce;
use crate::logs::{DeliveryLogRecord, JsonLinesWriter};
use crate::rule::is_valid_event_type;
use crate::wire::AckStatus;

pub use forward::ForwardError;
pub use table::{Route, SubscriptionError, SubscriptionTable, SubscriptionView};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct DispatcherConfig {
    pub name: String,
    pub addr: SocketAddr,
    pub delivery_log: Option<PathBuf>,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        DispatcherConfig {
            name: "dispatcher".into(),
            addr: ([127, 0, 0, 1], 0).into(),
            delivery_log: None,
        }
    }
}

/// Producer-facing event body.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestRequest {
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(with = "crate::wire::base64_bytes", default)]
    pub payload: Vec<u8>,
    /// Producer timestamp in ns; the dispatcher's clock when absent.
    #[serde(default)]
    pub created_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestAck {
    pub event_id: String,
    /// Number of triggers subscribed to the event's type.
    pub delivered_to: usize,
    /// Forwardings lost to connection failures.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped: usize,
    /// Forwardings the invoker refused (backpressure, stale routing).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub rejected: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DispatcherMetrics {
    pub events: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub rejected: u64,
}

#[derive(Default)]
struct Counters {
    events: AtomicU64,
    forwarded: AtomicU64,
    dropped: AtomicU64,
    rejected: AtomicU64,
}

pub struct Dispatcher {
    name: String,
    table: RwLock<Arc<SubscriptionTable>>,
    downstreams: forward::Downstreams,
    ids: EventIdGenerator,
    counters: Counters,
    delivery_log: Option<JsonLinesWriter<DeliveryLogRecord>>,
}

impl Dispatcher {
    /// Must be called within a tokio runtime when a delivery log is set.
    pub fn new(config: &DispatcherConfig) -> std::io::Result<Arc<Self>> {
        Ok(Arc::new(Dispatcher {
            name: config.name.clone(),
            table: RwLock::default(),
            downstreams: Default::default(),
            ids: EventIdGenerator::new(),
            counters: Counters::default(),
            delivery_log: config
                .delivery_log
                .as_ref()
                .map(JsonLinesWriter::create)
                .transpose()?,
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn table(&self) -> Arc<SubscriptionTable> {
        self.table.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn subscribe(&self, announce: &SubscriptionAnnounce) -> Result<(), SubscriptionError> {
        let mut guard = self.table.write().unwrap_or_else(|e| e.into_inner());
        let mut next = (**guard).clone();
        next.subscribe(
            &announce.trigger_id,
            &announce.event_types,
            &announce.replica_endpoints,
        )?;
        *guard = Arc::new(next);
        Ok(())
    }

    pub fn unsubscribe(&self, trigger_id: &str) -> bool {
        let mut guard = self.table.write().unwrap_or_else(|e| e.into_inner());
        let mut next = (**guard).clone();
        let found = next.unsubscribe(trigger_id);
        *guard = Arc::new(next);
        found
    }

    pub fn subscriptions(&self) -> Vec<SubscriptionView> {
        self.table().views()
    }

    pub fn metrics(&self) -> DispatcherMetrics {
        DispatcherMetrics {
            events: self.counters.events.load(Ordering::Relaxed),
            forwarded: self.counters.forwarded.load(Ordering::Relaxed),
            dropped: self.counters.dropped.load(Ordering::Relaxed),
            rejected: self.counters.rejected.load(Ordering::Relaxed),
        }
    }

    /// Assigns an id and forwards the event to one replica of every
    /// subscribed trigger.
    pub async fn ingest(&self, req: IngestRequest) -> Result<IngestAck, ApiError> {
        if !is_valid_event_type(&req.event_type) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalidEventType",
                format!("event type {:?} does not match [a-zA-Z]+", req.event_type),
            ));
        }
        self.counters.events.fetch_add(1, Ordering::Relaxed);
        let event = WireEvent {
            id: self.ids.next_id(),
            event_type: req.event_type,
            payload: req.payload,
            created_at: req.created_at.unwrap_or_else(now_ns),
        };
        let table = self.table();
        let routes = table.routes(&event.event_type);
        let mut ack = IngestAck {
            event_id: event.id.clone(),
            delivered_to: routes.len(),
            dropped: 0,
            rejected: 0,
        };
        if routes.is_empty() {
            return Ok(ack);
        }

        let event_json = serde_json::to_string(&event).expect("event serializes");
        let sends = routes.iter().map(|route| {
            let endpoint = route.next_endpoint();
            let event_json = &event_json;
            async move {
                let trigger_json =
                    serde_json::to_string(&route.trigger_id).expect("string serializes");
                let result = self
                    .downstreams
                    .forward(endpoint, &trigger_json, event_json)
                    .await;
                (route, endpoint, result)
            }
        });
        for (route, endpoint, result) in futures::future::join_all(sends).await {
            match result {
                Ok(a) if a.status == AckStatus::Ok => {
                    self.counters.forwarded.fetch_add(1, Ordering::Relaxed);
                    if let Some(log) = &self.delivery_log {
                        log.append(DeliveryLogRecord {
                            event_id: event.id.clone(),
                            trigger_id: route.trigger_id.clone(),
                            replica: endpoint.to_string(),
                        });
                    }
                }
                Ok(a) => {
                    self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                    ack.rejected += 1;
                    tracing::debug!(trigger_id = %route.trigger_id, status = ?a.status, "invoker refused event");
                }
                Err(e) => {
                    self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                    ack.dropped += 1;
                    tracing::warn!(trigger_id = %route.trigger_id, error = %e, "event dropped");
                }
            }
        }
        Ok(ack)
    }

    pub async fn sync_logs(&self) {
        if let Some(w) = &self.delivery_log {
            w.sync().await;
        }
    }
}

/// HTTP API:
///
/// - `POST /events` `{type, payload, createdAt}` → `{eventId, deliveredTo}`
/// - `POST /subscriptions` `{triggerId, eventTypes, replicaEndpoints}`
/// - `DELETE /subscriptions/{triggerId}`, `GET /subscriptions`, `GET /metrics`
pub fn router(dispatcher: Arc<Dispatcher>) -> Router {
    Router::new()
        .route("/events", post(ingest_event))
        .route("/subscriptions", post(subscribe).get(list_subscriptions))
        .route("/subscriptions/:id", delete(unsubscribe))
        .route("/metrics", get(metrics))
        .with_state(dispatcher)
}

async fn ingest_event(
    State(d): State<Arc<Dispatcher>>,
    Json(req): Json<IngestRequest>,
) -> Result<Json<IngestAck>, ApiError> {
    d.ingest(req).await.map(Json)
}

async fn subscribe(
    State(d): State<Arc<Dispatcher>>,
    Json(announce): Json<SubscriptionAnnounce>,
) -> Result<impl IntoResponse, ApiError> {
    d.subscribe(&announce)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformedSubscription", e))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn unsubscribe(
    State(d): State<Arc<Dispatcher>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    if d.unsubscribe(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknownTrigger",
            format!("no subscription for {id}"),
        ))
    }
}

async fn list_subscriptions(State(d): State<Arc<Dispatcher>>) -> impl IntoResponse {
    Json(d.subscriptions())
}

async fn metrics(State(d): State<Arc<Dispatcher>>) -> impl IntoResponse {
    Json(d.metrics())
}

pub struct RunningDispatcher {
    pub dispatcher: Arc<Dispatcher>,
    pub addr: SocketAddr,
    shutdown: CancellationToken,
    task: tokio::task::JoinHandle<()>,
}

impl RunningDispatcher {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        self.shutdown.cancel();
        let _ = self.task.await;
    }
}

pub async fn serve(config: DispatcherConfig) -> std::io::Result<RunningDispatcher> {
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let dispatcher = Dispatcher::new(&config)?;
    let shutdown = CancellationToken::new();
    let app = router(dispatcher.clone());
    let token = shutdown.clone();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(token.cancelled_owned())
            .await;
    });
    Ok(RunningDispatcher {
        dispatcher,
        addr,
        shutdown,
        task,
    })
}
