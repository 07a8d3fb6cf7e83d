//! Mock function: accepts invocations, timestamps them on receipt and logs
//! one firing record per request.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use crate::event::now_ns;
use crate::logs::{FiringLogRecord, JsonLinesWriter};
use crate::wire::InvocationPayload;

#[derive(Debug, Clone)]
pub struct SinkConfig {
    pub addr: SocketAddr,
    /// Simulated function run time before responding.
    pub delay: Duration,
    /// Fraction of requests answered with 500.
    pub failure_rate: f64,
    pub firing_log: Option<PathBuf>,
    pub seed: u64,
}

impl Default for SinkConfig {
    fn default() -> Self {
        SinkConfig {
            addr: ([127, 0, 0, 1], 0).into(),
            delay: Duration::ZERO,
            failure_rate: 0.0,
            firing_log: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SinkStats {
    pub received: u64,
    pub failed: u64,
    pub malformed: u64,
}

pub struct Sink {
    delay: Duration,
    failure_rate: f64,
    rng: Mutex<ChaCha8Rng>,
    log: Option<JsonLinesWriter<FiringLogRecord>>,
    records: Mutex<Vec<FiringLogRecord>>,
    received: AtomicU64,
    failed: AtomicU64,
    malformed: AtomicU64,
}

impl Sink {
    pub fn new(config: &SinkConfig) -> std::io::Result<Arc<Self>> {
        Ok(Arc::new(Sink {
            delay: config.delay,
            failure_rate: config.failure_rate.clamp(0.0, 1.0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            log: config
                .firing_log
                .as_ref()
                .map(JsonLinesWriter::create)
                .transpose()?,
            records: Mutex::new(Vec::new()),
            received: AtomicU64::new(0),
            failed: AtomicU64::new(0),
            malformed: AtomicU64::new(0),
        }))
    }

    pub fn stats(&self) -> SinkStats {
        SinkStats {
            received: self.received.load(Ordering::Relaxed),
            failed: self.failed.load(Ordering::Relaxed),
            malformed: self.malformed.load(Ordering::Relaxed),
        }
    }

    /// Every firing received so far, in receipt order.
    pub fn records(&self) -> Vec<FiringLogRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub async fn sync_logs(&self) {
        if let Some(log) = &self.log {
            log.sync().await;
        }
    }

    fn record(&self, payload: &InvocationPayload, received_at: i64, status: StatusCode) {
        let record = FiringLogRecord {
            trigger_id: payload.trigger_id.clone(),
            case_index: payload.case_index,
            fulfilling_event_id: payload.fulfilling_event_id.clone(),
            fulfilling_created_at: payload.fulfilling_created_at(),
            events: payload
                .events
                .iter()
                .map(|(t, evs)| (t.clone(), evs.iter().map(|e| e.id.clone()).collect()))
                .collect(),
            fired_at: payload.fired_at,
            received_at,
            status: status.as_u16(),
        };
        if let Some(log) = &self.log {
            log.append(record.clone());
        }
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(record);
    }
}

async fn invoke(State(sink): State<Arc<Sink>>, body: Bytes) -> StatusCode {
    let received_at = now_ns();
    let Ok(payload) = serde_json::from_slice::<InvocationPayload>(&body) else {
        sink.malformed.fetch_add(1, Ordering::Relaxed);
        return StatusCode::BAD_REQUEST;
    };
    sink.received.fetch_add(1, Ordering::Relaxed);
    let fail = sink.failure_rate > 0.0
        && sink
            .rng
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .gen_bool(sink.failure_rate);
    let status = if fail {
        sink.failed.fetch_add(1, Ordering::Relaxed);
        StatusCode::INTERNAL_SERVER_ERROR
    } else {
        StatusCode::OK
    };
    sink.record(&payload, received_at, status);
    if !sink.delay.is_zero() {
        tokio::time::sleep(sink.delay).await;
    }
    status
}

async fn stats(State(sink): State<Arc<Sink>>) -> Json<SinkStats> {
    Json(sink.stats())
}

/// `POST /` or `POST /{anything}` accepts an invocation; `GET /stats`.
pub fn router(sink: Arc<Sink>) -> Router {
    Router::new()
        .route("/", post(invoke))
        .route("/stats", get(stats))
        .route("/*path", post(invoke))
        .with_state(sink)
}

pub struct RunningSink {
    pub sink: Arc<Sink>,
    pub addr: SocketAddr,
    shutdown: CancellationToken,
    task: tokio::task::JoinHandle<()>,
}

impl RunningSink {
    /// Function URL to register triggers with.
    pub fn function_url(&self) -> String {
        format!("http://{}/fn", self.addr)
    }

    pub async fn shutdown(self) {
        self.shutdown.cancel();
        let _ = self.task.await;
    }
}

pub async fn serve(config: SinkConfig) -> std::io::Result<RunningSink> {
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let sink = Sink::new(&config)?;
    let shutdown = CancellationToken::new();
    let app = router(sink.clone());
    let token = shutdown.clone();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(token.cancelled_owned())
            .await;
    });
    Ok(RunningSink {
        sink,
        addr,
        shutdown,
        task,
    })
}
