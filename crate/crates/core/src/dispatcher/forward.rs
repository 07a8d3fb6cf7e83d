use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tokio_util::codec::{FramedRead, FramedWrite};

use crate::wire::{frame_codec, AckFrame};

const ACK_TIMEOUT: Duration = Duration::from_secs(10);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("connecting to {endpoint} failed: {reason}")]
    Connect { endpoint: String, reason: String },
    #[error("connection to {0} lost")]
    ConnectionLost(String),
    #[error("no ack from {0} within {ACK_TIMEOUT:?}")]
    Timeout(String),
}

type Pending = Arc<Mutex<HashMap<u64, oneshot::Sender<AckFrame>>>>;

/// One persistent, multiplexed connection to an invoker's frame listener.
/// Frames carry a sequence number; acks are matched back by it.
struct Connection {
    endpoint: String,
    tx: mpsc::UnboundedSender<Bytes>,
    pending: Pending,
    next_seq: AtomicU64,
    closed: Arc<AtomicBool>,
}

impl Connection {
    async fn open(endpoint: &str) -> Result<Arc<Self>, ForwardError> {
        let stream = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(endpoint))
            .await
            .map_err(|_| "timed out".to_string())
            .and_then(|r| r.map_err(|e| e.to_string()))
            .map_err(|reason| ForwardError::Connect {
                endpoint: endpoint.to_string(),
                reason,
            })?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        let (tx, mut rx) = mpsc::unbounded_channel::<Bytes>();
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));

        let fail_all = {
            let pending = pending.clone();
            let closed = closed.clone();
            move || {
                closed.store(true, Ordering::SeqCst);
                pending.lock().unwrap_or_else(|e| e.into_inner()).clear();
            }
        };

        let on_write_error = fail_all.clone();
        tokio::spawn(async move {
            let mut sink = FramedWrite::new(wr, frame_codec());
            while let Some(first) = rx.recv().await {
                let mut next = Some(first);
                while let Some(body) = next {
                    if sink.feed(body).await.is_err() {
                        on_write_error();
                        return;
                    }
                    next = rx.try_recv().ok();
                }
                if SinkExt::<Bytes>::flush(&mut sink).await.is_err() {
                    on_write_error();
                    return;
                }
            }
        });

        let acks = pending.clone();
        let ep = endpoint.to_string();
        tokio::spawn(async move {
            let mut frames = FramedRead::new(rd, frame_codec());
            while let Some(Ok(body)) = frames.next().await {
                match serde_json::from_slice::<AckFrame>(&body) {
                    Ok(ack) => {
                        let waiter = acks.lock().unwrap_or_else(|e| e.into_inner()).remove(&ack.seq);
                        if let Some(w) = waiter {
                            let _ = w.send(ack);
                        }
                    }
                    Err(e) => tracing::warn!(endpoint = %ep, error = %e, "bad ack frame"),
                }
            }
            tracing::debug!(endpoint = %ep, "invoker connection closed");
            fail_all();
        });

        Ok(Arc::new(Connection {
            endpoint: endpoint.to_string(),
            tx,
            pending,
            next_seq: AtomicU64::new(0),
            closed,
        }))
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Sends one frame built by `body(seq)` and waits for its ack.
    async fn request(&self, body: impl FnOnce(u64) -> Vec<u8>) -> Result<AckFrame, ForwardError> {
        let seq = self.next_seq.fetch_add(1, Ordering::Relaxed);
        let (done, wait) = oneshot::channel();
        self.pending
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(seq, done);
        if self.is_closed() || self.tx.send(Bytes::from(body(seq))).is_err() {
            self.pending
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .remove(&seq);
            return Err(ForwardError::ConnectionLost(self.endpoint.clone()));
        }
        match tokio::time::timeout(ACK_TIMEOUT, wait).await {
            Ok(Ok(ack)) => Ok(ack),
            Ok(Err(_)) => Err(ForwardError::ConnectionLost(self.endpoint.clone())),
            Err(_) => {
                self.pending
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .remove(&seq);
                Err(ForwardError::Timeout(self.endpoint.clone()))
            }
        }
    }
}

/// Connections to every invoker endpoint seen so far, opened lazily and
/// reopened after failure.
#[derive(Default)]
pub(super) struct Downstreams {
    conns: RwLock<HashMap<String, Arc<Connection>>>,
    connecting: tokio::sync::Mutex<()>,
}

impl Downstreams {
    async fn connection(&self, endpoint: &str) -> Result<Arc<Connection>, ForwardError> {
        if let Some(c) = self.live(endpoint) {
            return Ok(c);
        }
        let _guard = self.connecting.lock().await;
        if let Some(c) = self.live(endpoint) {
            return Ok(c);
        }
        let conn = Connection::open(endpoint).await?;
        self.conns
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(endpoint.to_string(), conn.clone());
        Ok(conn)
    }

    fn live(&self, endpoint: &str) -> Option<Arc<Connection>> {
        self.conns
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(endpoint)
            .filter(|c| !c.is_closed())
            .cloned()
    }

    /// Sends an event frame for `trigger_json` (a JSON string literal) with
    /// the pre-serialized `event_json` and returns the invoker's ack.
    pub(super) async fn forward(
        &self,
        endpoint: &str,
        trigger_json: &str,
        event_json: &str,
    ) -> Result<AckFrame, ForwardError> {
        let conn = self.connection(endpoint).await?;
        conn.request(|seq| {
            format!(r#"{{"seq":{seq},"triggerId":{trigger_json},"event":{event_json}}}"#)
                .into_bytes()
        })
        .await
    }
}
