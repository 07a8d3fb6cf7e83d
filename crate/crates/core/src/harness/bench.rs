//! Closed-loop throughput steps against a process cluster.
//!
//! Each client sends one event, waits for the producer ack and sends the
//! next. Throughput is acks per second over the measured window.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::cluster::{Cluster, ClusterSpec};
use super::run::{register_all, RunError};
use super::scenario::{EventStream, Scenario, Topology, TriggerSpec};
use super::schedule::random_payload;
use super::sink::{self, SinkConfig};
use crate::dispatcher::IngestRequest;

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub bin: PathBuf,
    /// Measured window per step.
    pub step: Duration,
    /// Unmeasured ramp-up before each window.
    pub warmup: Duration,
    /// Idle time between steps.
    pub cooldown: Duration,
    pub payload_bytes: usize,
}

impl BenchSettings {
    /// Short steps by default; `MET_BENCH_STEP_SECS`, `MET_BENCH_WARMUP_SECS`
    /// and `MET_BENCH_COOLDOWN_SECS` override (60/5/10 for full-length runs).
    pub fn from_env(bin: PathBuf) -> Self {
        let secs = |var: &str, default: f64| {
            std::env::var(var)
                .ok()
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v >= 0.0)
                .map(Duration::from_secs_f64)
                .unwrap_or(Duration::from_secs_f64(default))
        };
        BenchSettings {
            bin,
            step: secs("MET_BENCH_STEP_SECS", 3.0),
            warmup: secs("MET_BENCH_WARMUP_SECS", 0.5),
            cooldown: secs("MET_BENCH_COOLDOWN_SECS", 1.0),
            payload_bytes: 1024,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepResult {
    pub label: String,
    pub clients: usize,
    pub invokers: usize,
    pub copies: usize,
    pub acked: u64,
    pub errors: u64,
    pub seconds: f64,
    pub throughput_eps: f64,
}

/// Runs `clients` closed loops for `warmup + window` and counts acks that
/// complete inside the window.
pub async fn closed_loop(
    dispatchers: &[String],
    event_types: &[String],
    clients: usize,
    payload_bytes: usize,
    warmup: Duration,
    window: Duration,
) -> (u64, u64, f64) {
    let client = reqwest::Client::new();
    let acked = Arc::new(AtomicU64::new(0));
    let errors = Arc::new(AtomicU64::new(0));
    let start = Instant::now();
    let measure_from = start + warmup;
    let stop_at = measure_from + window;
    let mut tasks = Vec::new();
    for c in 0..clients {
        let client = client.clone();
        let urls: Vec<String> = dispatchers
            .iter()
            .map(|d| format!("{}/events", d.trim_end_matches('/')))
            .collect();
        let types = event_types.to_vec();
        let (acked, errors) = (acked.clone(), errors.clone());
        tasks.push(tokio::spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
            let mut k = c;
            while Instant::now() < stop_at {
                let req = IngestRequest {
                    event_type: types[k % types.len()].clone(),
                    payload: random_payload(&mut rng, payload_bytes),
                    created_at: None,
                };
                let url = &urls[k % urls.len()];
                k += 1;
                let ok = match client.post(url).json(&req).send().await {
                    Ok(r) => r.status().is_success(),
                    Err(_) => false,
                };
                let now = Instant::now();
                if now >= stop_at {
                    break;
                }
                if now >= measure_from {
                    if ok {
                        acked.fetch_add(1, Ordering::Relaxed);
                    } else {
                        errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        }));
    }
    for t in tasks {
        let _ = t.await;
    }
    let seconds = window.as_secs_f64();
    (
        acked.load(Ordering::Relaxed),
        errors.load(Ordering::Relaxed),
        seconds,
    )
}

/// A cluster plus in-process sink with `scenario`'s triggers registered.
struct Rig {
    cluster: Cluster,
    sink: sink::RunningSink,
}

impl Rig {
    async fn start(settings: &BenchSettings, scenario: &Scenario) -> Result<Rig, RunError> {
        let sink = sink::serve(SinkConfig::default()).await?;
        let cluster = Cluster::launch(&ClusterSpec {
            bin: settings.bin.clone(),
            dispatchers: scenario.topology.dispatchers,
            invokers: scenario.topology.invokers,
            log_dir: None,
            high_water_mark: None,
        })
        .await?;
        let admins: Vec<String> = cluster.invokers.iter().map(|i| i.admin_url.clone()).collect();
        // every copy on the first invoker; replicas follow from partitions
        register_all(scenario, &admins[..1], &sink.function_url()).await?;
        Ok(Rig { cluster, sink })
    }

    async fn stop(self) {
        let _ = self.cluster.shutdown().await;
        self.sink.shutdown().await;
    }
}

fn bench_scenario(rule: &str, types: &[&str], dispatchers: usize, invokers: usize, partitions: usize, copies: usize) -> Scenario {
    Scenario {
        name: "bench".into(),
        event_streams: types
            .iter()
            .map(|t| EventStream {
                event_type: t.to_string(),
                rate_per_minute: 0.0,
                payload_bytes: 1024,
                virtual_users: 1,
            })
            .collect(),
        duration_seconds: 1.0,
        triggers: vec![TriggerSpec {
            rule: rule.into(),
            function_url: None,
            partitions,
            copies,
        }],
        topology: Topology {
            dispatchers,
            invokers,
        },
    }
}

async fn step(
    settings: &BenchSettings,
    rig: &Rig,
    types: &[&str],
    label: String,
    clients: usize,
    invokers: usize,
    copies: usize,
) -> StepResult {
    let types: Vec<String> = types.iter().map(|t| t.to_string()).collect();
    let (acked, errors, seconds) = closed_loop(
        &rig.cluster.dispatcher_urls(),
        &types,
        clients,
        settings.payload_bytes,
        settings.warmup,
        settings.step,
    )
    .await;
    tokio::time::sleep(settings.cooldown).await;
    StepResult {
        label,
        clients,
        invokers,
        copies,
        acked,
        errors,
        seconds,
        throughput_eps: acked as f64 / seconds,
    }
}

/// Throughput of `3:a` on one dispatcher and one invoker for each client
/// count.
pub async fn client_sweep(settings: &BenchSettings, clients: &[usize]) -> Result<Vec<StepResult>, RunError> {
    let rig = Rig::start(settings, &bench_scenario("3:a", &["a"], 1, 1, 1, 1)).await?;
    let mut out = Vec::new();
    for &c in clients {
        out.push(step(settings, &rig, &["a"], format!("clients={c}"), c, 1, 1).await);
    }
    rig.stop().await;
    Ok(out)
}

/// `3:a` with one replica, then partitioned over two invoker processes, both
/// behind `dispatchers` dispatchers.
pub async fn partition_pair(
    settings: &BenchSettings,
    dispatchers: usize,
    clients: usize,
) -> Result<(StepResult, StepResult), RunError> {
    let mut results = Vec::new();
    for replicas in [1, 2] {
        let scenario = bench_scenario("3:a", &["a"], dispatchers, replicas, replicas, 1);
        let rig = Rig::start(settings, &scenario).await?;
        results.push(
            step(
                settings,
                &rig,
                &["a"],
                format!("replicas={replicas}"),
                clients,
                replicas,
                1,
            )
            .await,
        );
        rig.stop().await;
    }
    let two = results.pop().expect("two steps");
    let one = results.pop().expect("two steps");
    Ok((one, two))
}

/// Per-invoker throughput with `n` identical `AND(2:a,2:b)` triggers, for
/// each `n` in `copies`.
pub async fn trigger_copies(
    settings: &BenchSettings,
    copies: &[usize],
    clients: usize,
) -> Result<Vec<StepResult>, RunError> {
    let mut out = Vec::new();
    for &n in copies {
        let rig = Rig::start(settings, &bench_scenario("AND(2:a,2:b)", &["a", "b"], 1, 1, 1, n)).await?;
        out.push(step(settings, &rig, &["a", "b"], format!("copies={n}"), clients, 1, n).await);
        rig.stop().await;
    }
    Ok(out)
}

/// Checks the shape of a throughput-vs-clients curve: growth (each step at
/// least `1 - noise` of the previous one) until the first step within
/// `noise` of the peak, then a plateau (every later step within `noise` of
/// the peak).
pub fn check_saturation_shape(throughput: &[f64], noise: f64) -> Result<usize, String> {
    let peak = throughput.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err("no throughput".into());
    }
    let sat = throughput
        .iter()
        .position(|&t| t >= (1.0 - noise) * peak)
        .expect("peak is in the list");
    for i in 1..=sat {
        if throughput[i] < (1.0 - noise) * throughput[i - 1] {
            return Err(format!(
                "step {i} drops before saturation: {:.1} after {:.1}",
                throughput[i],
                throughput[i - 1]
            ));
        }
    }
    for (i, &t) in throughput.iter().enumerate().skip(sat) {
        if t < (1.0 - noise) * peak {
            return Err(format!("step {i} leaves the plateau: {t:.1} vs peak {peak:.1}"));
        }
    }
    Ok(sat)
}

/// Strictly lower at the end than at the start and never increasing.
pub fn check_non_increasing(throughput: &[f64]) -> Result<(), String> {
    for (i, w) in throughput.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(format!("step {} rises: {:.1} -> {:.1}", i + 1, w[0], w[1]));
        }
    }
    match (throughput.first(), throughput.last()) {
        (Some(a), Some(b)) if b < a => Ok(()),
        _ => Err("last step is not below the first".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_shape() {
        assert_eq!(check_saturation_shape(&[100.0, 180.0, 300.0, 310.0, 295.0], 0.1), Ok(2));
        // small dip within noise before saturation is tolerated
        assert!(check_saturation_shape(&[100.0, 95.0, 200.0, 210.0], 0.1).is_ok());
        assert!(check_saturation_shape(&[100.0, 50.0, 200.0], 0.1).is_err());
        // collapse after the peak is not a plateau
        assert!(check_saturation_shape(&[100.0, 300.0, 150.0], 0.1).is_err());
        assert!(check_saturation_shape(&[0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn non_increasing() {
        assert!(check_non_increasing(&[100.0, 50.0, 50.0, 1.0]).is_ok());
        assert!(check_non_increasing(&[100.0, 50.0, 60.0]).is_err());
        assert!(check_non_increasing(&[5.0, 5.0]).is_err());
    }
}
