//! Formats shared between processes.
//!
//! Dispatcher to invoker traffic is a stream of frames on a persistent TCP
//! connection: a 4-byte big-endian body length followed by a JSON body. The
//! dispatcher sends [`EventFrame`]s; the invoker answers each with an
//! [`AckFrame`] carrying the same `seq`, in the order the frames were read.
//!
//! Function invocations are HTTP POSTs of an [`InvocationPayload`].

use std::collections::BTreeMap;

use bytes::{BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use tokio_util::codec::LengthDelimitedCodec;

use crate::event::WireEvent;
use crate::trigger::FiringRecord;

/// Largest frame body either side accepts.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub fn frame_codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder()
        .length_field_length(4)
        .big_endian()
        .max_frame_length(MAX_FRAME_LEN)
        .new_codec()
}

/// Serializes `body` and prepends its length.
pub fn encode_frame<T: Serialize>(body: &T) -> serde_json::Result<Bytes> {
    let json = serde_json::to_vec(body)?;
    let mut buf = BytesMut::with_capacity(4 + json.len());
    buf.put_u32(json.len() as u32);
    buf.put_slice(&json);
    Ok(buf.freeze())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventFrame {
    pub seq: u64,
    pub trigger_id: String,
    pub event: WireEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AckStatus {
    Ok,
    UnknownTrigger,
    UnknownEventType,
    Backpressure,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AckFrame {
    pub seq: u64,
    pub status: AckStatus,
    #[serde(default)]
    pub fired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
}

impl AckFrame {
    pub fn ok(seq: u64, fired: bool) -> Self {
        AckFrame {
            seq,
            status: AckStatus::Ok,
            fired,
            retry_after_ms: None,
        }
    }

    pub fn error(seq: u64, status: AckStatus) -> Self {
        AckFrame {
            seq,
            status,
            fired: false,
            retry_after_ms: (status == AckStatus::Backpressure).then_some(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvokedEvent {
    pub id: String,
    pub created_at: i64,
    #[serde(with = "base64_bytes", default)]
    pub payload: Vec<u8>,
}

/// Body of a function invocation: the events that fulfilled one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvocationPayload {
    pub trigger_id: String,
    pub case_index: usize,
    pub fulfilling_event_id: String,
    pub events: BTreeMap<String, Vec<InvokedEvent>>,
    pub fired_at: i64,
}

impl From<&FiringRecord> for InvocationPayload {
    fn from(f: &FiringRecord) -> Self {
        InvocationPayload {
            trigger_id: f.trigger_id.clone(),
            case_index: f.case_index,
            fulfilling_event_id: f.fulfilling_event_id.clone(),
            events: f
                .consumed
                .iter()
                .map(|(t, evs)| {
                    let evs = evs
                        .iter()
                        .map(|e| InvokedEvent {
                            id: e.id.clone(),
                            created_at: e.created_at,
                            payload: e.payload.clone(),
                        })
                        .collect();
                    (t.clone(), evs)
                })
                .collect(),
            fired_at: f.fired_at,
        }
    }
}

impl InvocationPayload {
    pub fn event_count(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }

    /// Creation time of the event whose arrival completed the case.
    pub fn fulfilling_created_at(&self) -> Option<i64> {
        self.events
            .values()
            .flatten()
            .find(|e| e.id == self.fulfilling_event_id)
            .map(|e| e.created_at)
    }
}

/// Serde adapter for byte payloads carried as standard base64 strings.
pub mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}
