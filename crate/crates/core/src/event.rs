use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// A typed, uniquely identified input to the engine.
///
/// `arrival_seq` is assigned by the trigger handler that stores the event; it
/// is zero until then.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub id: String,
    pub event_type: String,
    pub payload: Vec<u8>,
    /// Producer timestamp, nanoseconds since the Unix epoch.
    pub created_at: i64,
    pub arrival_seq: u64,
}

impl Event {
    pub fn new(id: impl Into<String>, event_type: impl Into<String>) -> Self {
        Event {
            id: id.into(),
            event_type: event_type.into(),
            payload: Vec::new(),
            created_at: 0,
            arrival_seq: 0,
        }
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn created_at(mut self, ns: i64) -> Self {
        self.created_at = ns;
        self
    }
}

/// Wall clock in nanoseconds since the Unix epoch.
pub fn now_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as i64)
        .unwrap_or_default()
}

/// Sortable unique event ids (ULIDs, monotonic within one generator).
#[derive(Default)]
pub struct EventIdGenerator {
    inner: Mutex<ulid::Generator>,
}

impl EventIdGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> String {
        let mut gen = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        // generate() only fails when the random part overflows within one ms
        match gen.generate() {
            Ok(id) => id.to_string(),
            Err(_) => ulid::Ulid::new().to_string(),
        }
    }
}

/// Event as it travels in JSON bodies: payload base64-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WireEvent {
    pub id: String,
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(with = "crate::wire::base64_bytes", default)]
    pub payload: Vec<u8>,
    pub created_at: i64,
}

impl From<WireEvent> for Event {
    fn from(w: WireEvent) -> Self {
        Event {
            id: w.id,
            event_type: w.event_type,
            payload: w.payload,
            created_at: w.created_at,
            arrival_seq: 0,
        }
    }
}

impl From<&Event> for WireEvent {
    fn from(e: &Event) -> Self {
        WireEvent {
            id: e.id.clone(),
            event_type: e.event_type.clone(),
            payload: e.payload.clone(),
            created_at: e.created_at,
        }
    }
}
