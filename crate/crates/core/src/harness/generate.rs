use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio_util::sync::CancellationToken;

use super::scenario::Scenario;
use super::schedule::{self, random_payload, ScheduleMode, ScheduledEvent};
use crate::dispatcher::{IngestAck, IngestRequest};
use crate::event::now_ns;
use crate::logs::EventLogRecord;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Dispatcher base URLs; events are spread over them round-robin.
    pub dispatchers: Vec<String>,
    pub mode: ScheduleMode,
    pub seed: u64,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerateOutcome {
    #[serde(skip)]
    pub records: Vec<EventLogRecord>,
    pub sent: usize,
    pub scheduled: usize,
    /// True when the run was aborted and the log is incomplete.
    pub partial: bool,
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

/// Sends the scenario's events to the dispatchers in real time (scaled by
/// `time_scale`) and records every acknowledged event.
///
/// Deterministic mode sends from a single loop, one request at a time, so the
/// arrival order at every trigger equals the schedule order. Stochastic mode
/// runs one loop per virtual user.
pub async fn generate(scenario: &Scenario, opts: &GenerateOptions) -> GenerateOutcome {
    let plan = schedule::build(scenario, opts.mode, opts.seed);
    let scheduled = plan.len();
    let client = reqwest::Client::new();
    let start = Instant::now();
    let scale = if opts.time_scale > 0.0 { opts.time_scale } else { 1.0 };
    let cancel = CancellationToken::new();

    let lanes: Vec<Vec<ScheduledEvent>> = match opts.mode {
        ScheduleMode::Deterministic => vec![plan],
        ScheduleMode::Stochastic => {
            let mut by_user: BTreeMap<(usize, usize), Vec<ScheduledEvent>> = BTreeMap::new();
            for e in plan {
                by_user.entry((e.stream, e.user)).or_default().push(e);
            }
            by_user.into_values().collect()
        }
    };

    let scenario = Arc::new(scenario.clone());
    let dispatchers = Arc::new(opts.dispatchers.clone());
    let mut tasks = Vec::new();
    for (lane_index, lane) in lanes.into_iter().enumerate() {
        let client = client.clone();
        let scenario = scenario.clone();
        let dispatchers = dispatchers.clone();
        let cancel = cancel.clone();
        let seed = opts.seed ^ (lane_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        tasks.push(tokio::spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut records = Vec::with_capacity(lane.len());
            for (i, item) in lane.iter().enumerate() {
                let due = Duration::from_secs_f64(item.offset_ns as f64 / 1e9 / scale);
                tokio::select! {
                    _ = cancel.cancelled() => return (records, None),
                    _ = tokio::time::sleep_until((start + due).into()) => {}
                }
                let stream = &scenario.event_streams[item.stream];
                let payload = random_payload(&mut rng, stream.payload_bytes);
                let url = format!(
                    "{}/events",
                    dispatchers[(lane_index + i) % dispatchers.len()].trim_end_matches('/')
                );
                let created_at = now_ns();
                let req = IngestRequest {
                    event_type: stream.event_type.clone(),
                    payload,
                    created_at: Some(created_at),
                };
                match send(&client, &url, &req).await {
                    Ok(ack) => records.push(EventLogRecord {
                        event_id: ack.event_id,
                        event_type: req.event_type,
                        created_at,
                        acked_at: now_ns(),
                        delivered_to: ack.delivered_to,
                        payload_bytes: req.payload.len(),
                    }),
                    Err(e) => {
                        cancel.cancel();
                        return (records, Some(format!("{url}: {e}")));
                    }
                }
            }
            (records, None)
        }));
    }

    let mut records = Vec::new();
    let mut error = None;
    for t in tasks {
        match t.await {
            Ok((mut r, e)) => {
                records.append(&mut r);
                if error.is_none() {
                    error = e;
                }
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    records.sort_by(|a, b| (a.created_at, &a.event_id).cmp(&(b.created_at, &b.event_id)));
    GenerateOutcome {
        sent: records.len(),
        scheduled,
        partial: error.is_some(),
        error,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        records,
    }
}

async fn send(client: &reqwest::Client, url: &str, req: &IngestRequest) -> Result<IngestAck, String> {
    let resp = client
        .post(url)
        .json(req)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("status {}", resp.status()));
    }
    resp.json::<IngestAck>().await.map_err(|e| e.to_string())
}
