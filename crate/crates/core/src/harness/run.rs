//! End-to-end experiment: sink, SUT processes, generator, report.

use std::path::PathBuf;

use serde::Serialize;

use super::cluster::{Cluster, ClusterSpec};
use super::generate::{generate, GenerateOptions, GenerateOutcome};
use super::report::{self, Report, ReportError, ReportInput, TriggerRecord};
use super::scenario::Scenario;
use super::schedule::ScheduleMode;
use super::sink::{self, SinkConfig};
use crate::invoker::RegisterRequest;
use crate::logs::{read_json_lines, write_json_lines, ArrivalLogRecord};

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Path of the `met` executable.
    pub bin: PathBuf,
    pub out_dir: PathBuf,
    pub mode: ScheduleMode,
    pub seed: u64,
    pub time_scale: f64,
    pub sink: SinkConfig,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunOutcome {
    pub generate: GenerateOutcome,
    pub triggers: Vec<TriggerRecord>,
    pub report: Option<Report>,
    /// Set when the report failed; a mismatch still carries the report.
    pub report_error: Option<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        !self.generate.partial && self.report_error.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] super::scenario::ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("registering {rule}: {reason}")]
    Register { rule: String, reason: String },
}

/// Writes `events.jsonl`, `firings.jsonl`, `triggers.json`, per-process
/// arrival/delivery logs and `report.json` to `out_dir`.
pub async fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    scenario.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let sink = sink::serve(SinkConfig {
        firing_log: Some(opts.out_dir.join("firings.jsonl")),
        ..opts.sink.clone()
    })
    .await?;
    let cluster = Cluster::launch(&ClusterSpec {
        bin: opts.bin.clone(),
        dispatchers: scenario.topology.dispatchers,
        invokers: scenario.topology.invokers,
        log_dir: Some(opts.out_dir.clone()),
        high_water_mark: None,
    })
    .await?;

    let admin_urls: Vec<String> = cluster.invokers.iter().map(|i| i.admin_url.clone()).collect();
    let triggers = match register_all(scenario, &admin_urls, &sink.function_url()).await {
        Ok(t) => t,
        Err(e) => {
            let _ = cluster.shutdown().await;
            sink.shutdown().await;
            return Err(e);
        }
    };
    std::fs::write(
        opts.out_dir.join("triggers.json"),
        serde_json::to_vec_pretty(&triggers).expect("triggers serialize"),
    )?;

    let outcome = generate(
        scenario,
        &GenerateOptions {
            dispatchers: cluster.dispatcher_urls(),
            mode: opts.mode,
            seed: opts.seed,
            time_scale: opts.time_scale,
        },
    )
    .await;
    write_json_lines(opts.out_dir.join("events.jsonl"), &outcome.records)?;

    let arrival_paths: Vec<PathBuf> = cluster
        .invokers
        .iter()
        .filter_map(|i| i.arrival_log.clone())
        .collect();
    cluster.shutdown().await?;
    sink.sink.sync_logs().await;
    let firings = sink.sink.records();
    sink.shutdown().await;

    let mut arrivals: Vec<ArrivalLogRecord> = Vec::new();
    for p in &arrival_paths {
        arrivals.extend(read_json_lines(p)?);
    }
    let result = report::build(&ReportInput {
        events: &outcome.records,
        firings: &firings,
        triggers: &triggers,
        arrivals: Some(&arrivals),
        duration_seconds: Some(outcome.elapsed_seconds),
    });
    let (report, report_error) = match result {
        Ok(r) => (Some(r), None),
        Err(ReportError::Mismatch(r)) => {
            let msg = ReportError::Mismatch(r.clone()).to_string();
            (Some(*r), Some(msg))
        }
        Err(e) => (None, Some(e.to_string())),
    };
    if let Some(r) = &report {
        std::fs::write(
            opts.out_dir.join("report.json"),
            serde_json::to_vec_pretty(r).expect("report serializes"),
        )?;
    }
    Ok(RunOutcome {
        generate: outcome,
        triggers,
        report,
        report_error,
    })
}

/// Registers every trigger copy, spreading copies over invokers round-robin.
pub async fn register_all(
    scenario: &Scenario,
    admin_urls: &[String],
    default_function_url: &str,
) -> Result<Vec<TriggerRecord>, RunError> {
    let client = reqwest::Client::new();
    let mut out = Vec::new();
    let mut next = 0usize;
    for spec in &scenario.triggers {
        for _ in 0..spec.copies {
            let admin = &admin_urls[next % admin_urls.len()];
            next += 1;
            let req = RegisterRequest {
                rule: spec.rule.clone(),
                function_url: spec
                    .function_url
                    .clone()
                    .unwrap_or_else(|| default_function_url.to_string()),
                partitions: spec.partitions,
                trigger_id: None,
            };
            let err = |reason: String| RunError::Register {
                rule: spec.rule.clone(),
                reason,
            };
            let resp = client
                .post(format!("{admin}/triggers"))
                .json(&req)
                .send()
                .await
                .map_err(|e| err(e.to_string()))?;
            if !resp.status().is_success() {
                let status = resp.status();
                let body = resp.text().await.unwrap_or_default();
                return Err(err(format!("{status}: {body}")));
            }
            let body: serde_json::Value = resp.json().await.map_err(|e| err(e.to_string()))?;
            let trigger_id = body["triggerId"]
                .as_str()
                .ok_or_else(|| err("response without triggerId".into()))?
                .to_string();
            out.push(TriggerRecord {
                trigger_id,
                rule: spec.rule.clone(),
            });
        }
    }
    Ok(out)
}
