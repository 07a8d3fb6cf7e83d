//! JSON-lines record formats written by the services and the harness.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::event::Event;

/// One event sent by the load generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventLogRecord {
    pub event_id: String,
    #[serde(rename = "type")]
    pub event_type: String,
    pub created_at: i64,
    pub acked_at: i64,
    pub delivered_to: usize,
    pub payload_bytes: usize,
}

impl EventLogRecord {
    pub fn to_event(&self) -> Event {
        Event::new(&self.event_id, &self.event_type).created_at(self.created_at)
    }
}

/// One invocation received by the sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FiringLogRecord {
    pub trigger_id: String,
    pub case_index: usize,
    pub fulfilling_event_id: String,
    pub fulfilling_created_at: Option<i64>,
    /// Consumed event ids per type, oldest first.
    pub events: BTreeMap<String, Vec<String>>,
    pub fired_at: i64,
    pub received_at: i64,
    pub status: u16,
}

impl FiringLogRecord {
    /// Event–invocation latency in nanoseconds.
    pub fn latency_ns(&self) -> Option<i64> {
        self.fulfilling_created_at.map(|c| self.received_at - c)
    }
}

/// One event accepted by a trigger handler, in handler arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArrivalLogRecord {
    pub replica: String,
    pub trigger_id: String,
    pub arrival_seq: u64,
    pub event_id: String,
    #[serde(rename = "type")]
    pub event_type: String,
    pub created_at: i64,
}

impl ArrivalLogRecord {
    pub fn to_event(&self) -> Event {
        let mut e = Event::new(&self.event_id, &self.event_type).created_at(self.created_at);
        e.arrival_seq = self.arrival_seq;
        e
    }
}

/// One (event, trigger) forwarding performed by a dispatcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeliveryLogRecord {
    pub event_id: String,
    pub trigger_id: String,
    pub replica: String,
}

pub fn read_json_lines<T: DeserializeOwned>(path: impl AsRef<Path>) -> io::Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_json_lines<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Appends records to a file from a background task. Records sent through one
/// writer keep their send order.
#[derive(Debug)]
pub struct JsonLinesWriter<T> {
    tx: mpsc::UnboundedSender<WriterMsg<T>>,
}

impl<T> Clone for JsonLinesWriter<T> {
    fn clone(&self) -> Self {
        JsonLinesWriter {
            tx: self.tx.clone(),
        }
    }
}

#[derive(Debug)]
enum WriterMsg<T> {
    Record(T),
    Sync(tokio::sync::oneshot::Sender<()>),
}

impl<T: Serialize + Send + 'static> JsonLinesWriter<T> {
    /// Creates (truncating) `path`. Must be called inside a tokio runtime.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = std::fs::File::create(path)?;
        let (tx, mut rx) = mpsc::unbounded_channel::<WriterMsg<T>>();
        tokio::task::spawn_blocking(move || {
            let mut w = io::BufWriter::new(file);
            while let Some(first) = rx.blocking_recv() {
                let mut next = Some(first);
                let mut waiters = Vec::new();
                while let Some(msg) = next {
                    match msg {
                        WriterMsg::Record(record) => {
                            if serde_json::to_writer(&mut w, &record).is_err()
                                || w.write_all(b"\n").is_err()
                            {
                                tracing::warn!("log write failed");
                            }
                        }
                        WriterMsg::Sync(done) => waiters.push(done),
                    }
                    next = rx.try_recv().ok();
                }
                let _ = w.flush();
                for done in waiters {
                    let _ = done.send(());
                }
            }
        });
        Ok(JsonLinesWriter { tx })
    }

    pub fn append(&self, record: T) {
        let _ = self.tx.send(WriterMsg::Record(record));
    }

    /// Resolves once everything appended so far is flushed to the file.
    pub async fn sync(&self) {
        let (done, wait) = tokio::sync::oneshot::channel();
        if self.tx.send(WriterMsg::Sync(done)).is_ok() {
            let _ = wait.await;
        }
    }
}
