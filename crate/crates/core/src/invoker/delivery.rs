use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio_util::task::TaskTracker;

use super::TriggerEntry;
use crate::event::now_ns;
use crate::trigger::FiringRecord;
use crate::wire::InvocationPayload;

const FUNCTION_TIMEOUT: Duration = Duration::from_secs(30);
const ADMIN_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeliveryStats {
    pub invocations: u64,
    pub delivery_failures: u64,
}

#[derive(Debug, Default)]
pub(super) struct DeliveryCounters {
    invocations: AtomicU64,
    failures: AtomicU64,
}

impl DeliveryCounters {
    pub(super) fn snapshot(&self) -> DeliveryStats {
        DeliveryStats {
            invocations: self.invocations.load(Ordering::Relaxed),
            delivery_failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Fire-and-forget function calls. Each firing is POSTed once; failures are
/// counted and logged, never retried.
pub(super) struct Deliverer {
    client: reqwest::Client,
    permits: Arc<Semaphore>,
    tracker: TaskTracker,
}

impl Deliverer {
    pub(super) fn new(max_concurrent: usize) -> Self {
        Deliverer {
            client: reqwest::Client::builder()
                .timeout(FUNCTION_TIMEOUT)
                .build()
                .expect("http client"),
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
            tracker: TaskTracker::new(),
        }
    }

    pub(super) fn client(&self) -> &reqwest::Client {
        &self.client
    }

    pub(super) fn dispatch(&self, entry: Arc<TriggerEntry>, firing: FiringRecord) {
        let client = self.client.clone();
        let permits = self.permits.clone();
        self.tracker.spawn(async move {
            let Ok(_permit) = permits.acquire_owned().await else {
                return;
            };
            let mut payload = InvocationPayload::from(&firing);
            payload.fired_at = now_ns();
            let result = client
                .post(&entry.info.function_url)
                .json(&payload)
                .send()
                .await;
            let counters = &entry.deliveries;
            counters.invocations.fetch_add(1, Ordering::Relaxed);
            let failure = match result {
                Ok(resp) if resp.status().is_success() => None,
                Ok(resp) => Some(format!("status {}", resp.status())),
                Err(e) => Some(e.to_string()),
            };
            if let Some(reason) = failure {
                counters.failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(
                    trigger_id = %entry.info.trigger_id,
                    case = firing.case_index,
                    %reason,
                    "function invocation failed"
                );
            }
        });
    }

    pub(super) async fn admin_call(&self, req: reqwest::RequestBuilder) -> Result<(), String> {
        let resp = req
            .timeout(ADMIN_TIMEOUT)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            let status = resp.status();
            let body = resp.text().await.unwrap_or_default();
            Err(format!("{status}: {body}"))
        }
    }

    pub(super) async fn drain(&self) {
        self.tracker.close();
        self.tracker.wait().await;
        self.tracker.reopen();
    }
}
