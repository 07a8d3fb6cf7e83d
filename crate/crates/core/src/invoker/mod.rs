//! Invoker: hosts trigger handlers, takes routed events from dispatchers and
//! calls functions over HTTP when a handler fires.
//!
//! Registration is local to the invoker that receives it. A trigger with
//! `partitions > 1` is also installed on the first `partitions - 1` peers from
//! the static configuration, and every dispatcher is told to spread the
//! trigger's event types across all replicas.

mod delivery;
mod http;
mod intake;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use crate::event::{Event, EventIdGenerator};
use crate::logs::{ArrivalLogRecord, JsonLinesWriter};
use crate::rule::{NormalizedRule, RuleError};
use crate::trigger::{HandlerSnapshot, TriggerError, TriggerHandler, DEFAULT_HIGH_WATER_MARK};

pub use delivery::DeliveryStats;
pub use http::router;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PeerConfig {
    pub name: String,
    /// Base URL of the peer's admin API.
    pub admin_url: String,
    /// `host:port` of the peer's frame listener.
    pub frame_endpoint: String,
}

/// Static invoker configuration, loadable from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct InvokerConfig {
    pub name: String,
    pub admin_addr: SocketAddr,
    pub frame_addr: SocketAddr,
    /// Frame endpoint announced to dispatchers; defaults to the bound address.
    pub advertise_frames: Option<String>,
    /// Base URLs of every dispatcher's admin API.
    pub dispatchers: Vec<String>,
    pub peers: Vec<PeerConfig>,
    pub high_water_mark: usize,
    pub max_concurrent_deliveries: usize,
    pub arrival_log: Option<PathBuf>,
}

impl Default for InvokerConfig {
    fn default() -> Self {
        InvokerConfig {
            name: "invoker".into(),
            admin_addr: ([127, 0, 0, 1], 0).into(),
            frame_addr: ([127, 0, 0, 1], 0).into(),
            advertise_frames: None,
            dispatchers: Vec::new(),
            peers: Vec::new(),
            high_water_mark: DEFAULT_HIGH_WATER_MARK,
            max_concurrent_deliveries: 1024,
            arrival_log: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum InvokerError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error("function url {0:?} is not an absolute http(s) url")]
    InvalidFunctionUrl(String),
    #[error("partitions must be between 1 and {max}, got {got}")]
    InvalidPartitions { got: usize, max: usize },
    #[error("announcing to {target} failed: {reason}")]
    Announce { target: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegisterRequest {
    pub rule: String,
    pub function_url: String,
    #[serde(default = "one")]
    pub partitions: usize,
    /// Assigned by the invoker when absent.
    #[serde(default)]
    pub trigger_id: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicaInstall {
    pub rule: String,
    pub function_url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerInfo {
    pub trigger_id: String,
    pub rule: String,
    pub function_url: String,
    pub partitions: usize,
    pub replica_endpoints: Vec<String>,
    /// False on peers holding a replica registered elsewhere.
    pub primary: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerListing {
    #[serde(flatten)]
    pub info: TriggerInfo,
    pub snapshot: HandlerSnapshot,
    pub deliveries: DeliveryStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeregisterResponse {
    pub trigger_id: String,
    pub dropped_events: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubscriptionAnnounce {
    pub trigger_id: String,
    pub event_types: Vec<String>,
    pub replica_endpoints: Vec<String>,
}

struct TriggerEntry {
    info: TriggerInfo,
    handler: Mutex<TriggerHandler>,
    deliveries: delivery::DeliveryCounters,
}

#[derive(Debug, Default, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvokerTotals {
    pub frames: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub firings: u64,
}

#[derive(Default)]
struct Totals {
    frames: AtomicU64,
    accepted: AtomicU64,
    rejected: AtomicU64,
    firings: AtomicU64,
}

/// Shared invoker state, used by the admin API and the frame listener.
pub struct Invoker {
    name: String,
    frame_endpoint: String,
    dispatchers: Vec<String>,
    peers: Vec<PeerConfig>,
    high_water_mark: usize,
    triggers: RwLock<HashMap<String, Arc<TriggerEntry>>>,
    registration: tokio::sync::Mutex<()>,
    ids: EventIdGenerator,
    arrival_log: Option<JsonLinesWriter<ArrivalLogRecord>>,
    delivery: delivery::Deliverer,
    totals: Totals,
}

impl Invoker {
    /// Builds invoker state. Call within a tokio runtime when an arrival log
    /// is configured.
    pub fn new(config: &InvokerConfig, frame_endpoint: String) -> Result<Arc<Self>, InvokerError> {
        let arrival_log = config
            .arrival_log
            .as_ref()
            .map(JsonLinesWriter::create)
            .transpose()?;
        Ok(Arc::new(Invoker {
            name: config.name.clone(),
            frame_endpoint,
            dispatchers: config.dispatchers.clone(),
            peers: config.peers.clone(),
            high_water_mark: config.high_water_mark,
            triggers: RwLock::new(HashMap::new()),
            registration: tokio::sync::Mutex::new(()),
            ids: EventIdGenerator::new(),
            arrival_log,
            delivery: delivery::Deliverer::new(config.max_concurrent_deliveries),
            totals: Totals::default(),
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frame_endpoint(&self) -> &str {
        &self.frame_endpoint
    }

    /// Number of invokers a trigger registered here may be partitioned over.
    pub fn replica_capacity(&self) -> usize {
        1 + self.peers.len()
    }

    fn entry(&self, trigger_id: &str) -> Option<Arc<TriggerEntry>> {
        self.triggers
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(trigger_id)
            .cloned()
    }

    fn install(&self, info: TriggerInfo, rule: NormalizedRule) -> Result<(), TriggerError> {
        let mut triggers = self.triggers.write().unwrap_or_else(|e| e.into_inner());
        if triggers.contains_key(&info.trigger_id) {
            return Err(TriggerError::DuplicateTriggerId(info.trigger_id));
        }
        let handler = TriggerHandler::new(&info.trigger_id, rule, &info.function_url)
            .with_high_water_mark(self.high_water_mark);
        triggers.insert(
            info.trigger_id.clone(),
            Arc::new(TriggerEntry {
                info,
                handler: Mutex::new(handler),
                deliveries: Default::default(),
            }),
        );
        Ok(())
    }

    fn uninstall(&self, trigger_id: &str) -> Result<(TriggerInfo, usize), TriggerError> {
        let entry = self
            .triggers
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(trigger_id)
            .ok_or_else(|| TriggerError::UnknownTrigger(trigger_id.to_string()))?;
        let dropped = entry
            .handler
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clear();
        Ok((entry.info.clone(), dropped))
    }

    /// Registers a trigger, installs its replicas on peers and announces its
    /// event types to every dispatcher. Nothing is left behind on failure.
    pub async fn register(&self, req: RegisterRequest) -> Result<String, InvokerError> {
        let mut rule = NormalizedRule::compile(&req.rule)?;
        rule.source_text = crate::rule::parse(&req.rule)?.render();
        validate_function_url(&req.function_url)?;
        if req.partitions == 0 || req.partitions > self.replica_capacity() {
            return Err(InvokerError::InvalidPartitions {
                got: req.partitions,
                max: self.replica_capacity(),
            });
        }

        let _guard = self.registration.lock().await;
        let trigger_id = req
            .trigger_id
            .clone()
            .unwrap_or_else(|| format!("trg-{}", self.ids.next_id().to_lowercase()));
        if self.entry(&trigger_id).is_some() {
            return Err(TriggerError::DuplicateTriggerId(trigger_id).into());
        }
        let peers = &self.peers[..req.partitions - 1];
        let mut replica_endpoints = vec![self.frame_endpoint.clone()];
        replica_endpoints.extend(peers.iter().map(|p| p.frame_endpoint.clone()));
        let info = TriggerInfo {
            trigger_id: trigger_id.clone(),
            rule: rule.source_text.clone(),
            function_url: req.function_url.clone(),
            partitions: req.partitions,
            replica_endpoints: replica_endpoints.clone(),
            primary: true,
        };
        let event_types = rule.event_types();
        self.install(info, rule.clone())?;

        let install = ReplicaInstall {
            rule: req.rule.clone(),
            function_url: req.function_url.clone(),
        };
        let mut installed: Vec<&PeerConfig> = Vec::new();
        let mut announced: Vec<&String> = Vec::new();
        let outcome = async {
            for peer in peers {
                let url = format!("{}/replicas/{trigger_id}", peer.admin_url.trim_end_matches('/'));
                self.delivery
                    .admin_call(self.delivery.client().put(&url).json(&install))
                    .await
                    .map_err(|reason| InvokerError::Announce {
                        target: url.clone(),
                        reason,
                    })?;
                installed.push(peer);
            }
            let announce = SubscriptionAnnounce {
                trigger_id: trigger_id.clone(),
                event_types,
                replica_endpoints,
            };
            for d in &self.dispatchers {
                let url = format!("{}/subscriptions", d.trim_end_matches('/'));
                self.delivery
                    .admin_call(self.delivery.client().post(&url).json(&announce))
                    .await
                    .map_err(|reason| InvokerError::Announce {
                        target: url.clone(),
                        reason,
                    })?;
                announced.push(d);
            }
            Ok::<_, InvokerError>(())
        }
        .await;

        if let Err(e) = outcome {
            for d in announced {
                self.retract_subscription(d, &trigger_id).await;
            }
            for peer in installed {
                self.remove_replica(peer, &trigger_id).await;
            }
            let _ = self.uninstall(&trigger_id);
            return Err(e);
        }
        tracing::info!(%trigger_id, rule = %req.rule, partitions = req.partitions, "trigger registered");
        Ok(trigger_id)
    }

    /// Installs a replica of a trigger registered at another invoker.
    pub async fn install_replica(
        &self,
        trigger_id: &str,
        req: ReplicaInstall,
    ) -> Result<(), InvokerError> {
        let rule = NormalizedRule::compile(&req.rule)?;
        validate_function_url(&req.function_url)?;
        let _guard = self.registration.lock().await;
        self.install(
            TriggerInfo {
                trigger_id: trigger_id.to_string(),
                rule: rule.source_text.clone(),
                function_url: req.function_url,
                partitions: 1,
                replica_endpoints: vec![self.frame_endpoint.clone()],
                primary: false,
            },
            rule,
        )?;
        Ok(())
    }

    /// Removes a trigger, dropping its queued events. On the registering
    /// invoker this also retracts subscriptions and peer replicas.
    pub async fn deregister(&self, trigger_id: &str) -> Result<DeregisterResponse, InvokerError> {
        let _guard = self.registration.lock().await;
        let (info, dropped) = self.uninstall(trigger_id)?;
        if info.primary {
            for d in &self.dispatchers {
                self.retract_subscription(d, trigger_id).await;
            }
            for peer in &self.peers[..info.partitions - 1] {
                self.remove_replica(peer, trigger_id).await;
            }
        }
        tracing::info!(%trigger_id, dropped, "trigger deregistered");
        Ok(DeregisterResponse {
            trigger_id: trigger_id.to_string(),
            dropped_events: dropped,
        })
    }

    async fn retract_subscription(&self, dispatcher: &str, trigger_id: &str) {
        let url = format!("{}/subscriptions/{trigger_id}", dispatcher.trim_end_matches('/'));
        if let Err(reason) = self
            .delivery
            .admin_call(self.delivery.client().delete(&url))
            .await
        {
            tracing::warn!(%url, %reason, "retracting subscription failed");
        }
    }

    async fn remove_replica(&self, peer: &PeerConfig, trigger_id: &str) {
        let url = format!("{}/replicas/{trigger_id}", peer.admin_url.trim_end_matches('/'));
        if let Err(reason) = self
            .delivery
            .admin_call(self.delivery.client().delete(&url))
            .await
        {
            tracing::warn!(%url, %reason, "removing replica failed");
        }
    }

    /// Removes a replica installed by [`Invoker::install_replica`].
    pub async fn drop_replica(&self, trigger_id: &str) -> Result<DeregisterResponse, InvokerError> {
        let _guard = self.registration.lock().await;
        let (_, dropped) = self.uninstall(trigger_id)?;
        Ok(DeregisterResponse {
            trigger_id: trigger_id.to_string(),
            dropped_events: dropped,
        })
    }

    pub fn list(&self) -> Vec<TriggerListing> {
        let entries: Vec<Arc<TriggerEntry>> = self
            .triggers
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        let mut out: Vec<TriggerListing> = entries
            .iter()
            .map(|e| TriggerListing {
                info: e.info.clone(),
                snapshot: e
                    .handler
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .snapshot(),
                deliveries: e.deliveries.snapshot(),
            })
            .collect();
        out.sort_by(|a, b| a.info.trigger_id.cmp(&b.info.trigger_id));
        out
    }

    pub fn totals(&self) -> InvokerTotals {
        InvokerTotals {
            frames: self.totals.frames.load(Ordering::Relaxed),
            accepted: self.totals.accepted.load(Ordering::Relaxed),
            rejected: self.totals.rejected.load(Ordering::Relaxed),
            firings: self.totals.firings.load(Ordering::Relaxed),
        }
    }

    /// Ingests one routed event. Returns whether the trigger fired; the
    /// function call itself runs in the background.
    pub fn receive_event(&self, trigger_id: &str, event: Event) -> Result<bool, TriggerError> {
        self.totals.frames.fetch_add(1, Ordering::Relaxed);
        let entry = self
            .entry(trigger_id)
            .ok_or_else(|| TriggerError::UnknownTrigger(trigger_id.to_string()))?;
        let firing = {
            let mut handler = entry.handler.lock().unwrap_or_else(|e| e.into_inner());
            let log = self.arrival_log.as_ref().map(|_| {
                (
                    event.id.clone(),
                    event.event_type.clone(),
                    event.created_at,
                )
            });
            let result = handler.ingest(event);
            if let Err(e) = &result {
                self.totals.rejected.fetch_add(1, Ordering::Relaxed);
                return Err(e.clone());
            }
            if let (Some(writer), Some((event_id, event_type, created_at))) =
                (&self.arrival_log, log)
            {
                writer.append(ArrivalLogRecord {
                    replica: self.name.clone(),
                    trigger_id: trigger_id.to_string(),
                    arrival_seq: handler.stats().events_received - 1,
                    event_id,
                    event_type,
                    created_at,
                });
            }
            result.unwrap_or_default()
        };
        self.totals.accepted.fetch_add(1, Ordering::Relaxed);
        match firing {
            Some(firing) => {
                self.totals.firings.fetch_add(1, Ordering::Relaxed);
                self.delivery.dispatch(entry, firing);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Waits until the arrival log has been flushed.
    pub async fn sync_logs(&self) {
        if let Some(w) = &self.arrival_log {
            w.sync().await;
        }
    }

    /// Waits until no function call is in flight.
    pub async fn drain_deliveries(&self) {
        self.delivery.drain().await;
    }
}

fn validate_function_url(url: &str) -> Result<(), InvokerError> {
    match reqwest::Url::parse(url) {
        Ok(u) if matches!(u.scheme(), "http" | "https") && u.has_host() => Ok(()),
        _ => Err(InvokerError::InvalidFunctionUrl(url.to_string())),
    }
}

/// A running invoker: admin API plus frame listener.
pub struct RunningInvoker {
    pub invoker: Arc<Invoker>,
    pub admin_addr: SocketAddr,
    pub frame_addr: SocketAddr,
    shutdown: CancellationToken,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl RunningInvoker {
    pub fn admin_url(&self) -> String {
        format!("http://{}", self.admin_addr)
    }

    pub async fn shutdown(self) {
        self.shutdown.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Binds both listeners and serves until [`RunningInvoker::shutdown`].
pub async fn serve(config: InvokerConfig) -> Result<RunningInvoker, InvokerError> {
    let admin = TcpListener::bind(config.admin_addr).await?;
    let frames = TcpListener::bind(config.frame_addr).await?;
    let admin_addr = admin.local_addr()?;
    let frame_addr = frames.local_addr()?;
    let endpoint = config
        .advertise_frames
        .clone()
        .unwrap_or_else(|| frame_addr.to_string());
    let invoker = Invoker::new(&config, endpoint)?;
    let shutdown = CancellationToken::new();

    let app = router(invoker.clone());
    let token = shutdown.clone();
    let admin_task = tokio::spawn(async move {
        let _ = axum::serve(admin, app)
            .with_graceful_shutdown(token.cancelled_owned())
            .await;
    });
    let frame_task = tokio::spawn(intake::serve_frames(
        frames,
        invoker.clone(),
        shutdown.clone(),
    ));
    Ok(RunningInvoker {
        invoker,
        admin_addr,
        frame_addr,
        shutdown,
        tasks: vec![admin_task, frame_task],
    })
}
