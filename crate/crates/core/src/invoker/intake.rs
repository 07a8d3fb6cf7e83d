use std::sync::Arc;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_util::codec::{FramedRead, FramedWrite};
use tokio_util::sync::CancellationToken;

use super::Invoker;
use crate::trigger::TriggerError;
use crate::wire::{frame_codec, AckFrame, AckStatus, EventFrame};

pub(super) async fn serve_frames(
    listener: TcpListener,
    invoker: Arc<Invoker>,
    shutdown: CancellationToken,
) {
    loop {
        tokio::select! {
            _ = shutdown.cancelled() => return,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let _ = stream.set_nodelay(true);
                    tracing::debug!(%peer, "dispatcher connected");
                    tokio::spawn(connection(stream, invoker.clone(), shutdown.clone()));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            }
        }
    }
}

#[derive(Deserialize)]
struct SeqOnly {
    seq: u64,
}

/// Frames on one connection are ingested in the order they were read, and
/// acknowledged in that order.
async fn connection(stream: TcpStream, invoker: Arc<Invoker>, shutdown: CancellationToken) {
    let (rd, wr) = stream.into_split();
    let mut frames = FramedRead::new(rd, frame_codec());
    let mut sink = FramedWrite::new(wr, frame_codec());
    let (ack_tx, mut ack_rx) = mpsc::unbounded_channel::<AckFrame>();

    let writer = tokio::spawn(async move {
        while let Some(first) = ack_rx.recv().await {
            let mut next = Some(first);
            while let Some(ack) = next {
                let body = serde_json::to_vec(&ack).expect("ack serializes");
                if sink.feed(Bytes::from(body)).await.is_err() {
                    return;
                }
                next = ack_rx.try_recv().ok();
            }
            if SinkExt::<Bytes>::flush(&mut sink).await.is_err() {
                return;
            }
        }
    });

    loop {
        let frame = tokio::select! {
            _ = shutdown.cancelled() => break,
            frame = frames.next() => frame,
        };
        let body = match frame {
            Some(Ok(body)) => body,
            Some(Err(e)) => {
                tracing::warn!(error = %e, "bad frame, closing connection");
                break;
            }
            None => break,
        };
        let ack = match serde_json::from_slice::<EventFrame>(&body) {
            Ok(frame) => {
                let seq = frame.seq;
                match invoker.receive_event(&frame.trigger_id, frame.event.into()) {
                    Ok(fired) => AckFrame::ok(seq, fired),
                    Err(e) => AckFrame::error(seq, ack_status(&e)),
                }
            }
            Err(e) => match serde_json::from_slice::<SeqOnly>(&body) {
                Ok(SeqOnly { seq }) => {
                    tracing::warn!(error = %e, seq, "malformed event frame");
                    AckFrame::error(seq, AckStatus::Malformed)
                }
                Err(_) => {
                    tracing::warn!(error = %e, "unparseable frame, closing connection");
                    break;
                }
            },
        };
        if ack_tx.send(ack).is_err() {
            break;
        }
    }
    drop(ack_tx);
    let _ = writer.await;
}

fn ack_status(e: &TriggerError) -> AckStatus {
    match e {
        TriggerError::UnknownTrigger(_) | TriggerError::DuplicateTriggerId(_) => {
            AckStatus::UnknownTrigger
        }
        TriggerError::UnknownEventType { .. } => AckStatus::UnknownEventType,
        TriggerError::Backpressure { .. } => AckStatus::Backpressure,
    }
}
