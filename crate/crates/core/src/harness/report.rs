//! Offline metrics over event, firing and arrival logs.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Event;
use crate::logs::{ArrivalLogRecord, EventLogRecord, FiringLogRecord};
use crate::oracle::{self, InvocationRatio};
use crate::rule::{NormalizedRule, RuleError};
use crate::trigger::FiringSignature;

/// A registered trigger as recorded by `run`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerRecord {
    pub trigger_id: String,
    pub rule: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Distribution {
    pub count: usize,
    pub median_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub max_ms: Option<f64>,
    /// `(value_ms, cumulative_fraction)`, at most 101 points.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub cdf: Vec<(f64, f64)>,
}

impl Distribution {
    pub fn from_ns(samples: impl IntoIterator<Item = i64>, with_cdf: bool) -> Self {
        let mut v: Vec<i64> = samples.into_iter().collect();
        v.sort_unstable();
        let ms = |ns: i64| ns as f64 / 1e6;
        let at = |q: f64| percentile(&v, q).map(ms);
        let cdf = if with_cdf && !v.is_empty() {
            (0..=100)
                .map(|i| {
                    let q = i as f64 / 100.0;
                    (ms(percentile(&v, q).unwrap()), q)
                })
                .collect()
        } else {
            Vec::new()
        };
        Distribution {
            count: v.len(),
            median_ms: at(0.5),
            p95_ms: at(0.95),
            p99_ms: at(0.99),
            max_ms: v.last().copied().map(ms),
            cdf,
        }
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[i64], q: f64) -> Option<i64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleDiff {
    pub expected: usize,
    pub observed: usize,
    pub matched: usize,
    /// Expected firings the sink never saw, as `trigger/fulfillingEventId`.
    pub missing: Vec<String>,
    /// Sink firings with no expected counterpart.
    pub unexpected: Vec<String>,
    /// Same fulfilling event, different case or consumed events.
    pub mismatched: Vec<String>,
}

impl OracleDiff {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.mismatched.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub events: u64,
    pub firings: u64,
    pub invocation_ratio: Option<f64>,
    pub firings_per_case: BTreeMap<String, Vec<u64>>,
    pub failed_invocations: u64,
    pub latency: Distribution,
    pub ack_latency: Distribution,
    pub throughput_eps: f64,
    pub duration_seconds: f64,
    pub oracle_source: String,
    pub oracle_diff: OracleDiff,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trigger {trigger_id}: {source}")]
    Rule {
        trigger_id: String,
        #[source]
        source: RuleError,
    },
    #[error("firing for unknown trigger {0}")]
    UnknownTrigger(String),
    #[error("firing {firing} consumed event {event_id} that is not in the logs")]
    UnknownEvent { firing: String, event_id: String },
    #[error(
        "firing log does not match the oracle: {} missing, {} unexpected, {} mismatched",
        .0.oracle_diff.missing.len(),
        .0.oracle_diff.unexpected.len(),
        .0.oracle_diff.mismatched.len()
    )]
    Mismatch(Box<Report>),
}

pub struct ReportInput<'a> {
    pub events: &'a [EventLogRecord],
    pub firings: &'a [FiringLogRecord],
    pub triggers: &'a [TriggerRecord],
    /// Per-replica arrival order; when absent the event log order is
    /// replayed, which is only exact for sequential deterministic runs.
    pub arrivals: Option<&'a [ArrivalLogRecord]>,
    /// Lower bound for the throughput denominator.
    pub duration_seconds: Option<f64>,
}

/// Computes the metrics document and checks every firing against the oracle.
/// Any difference is an error carrying the full report.
pub fn build(input: &ReportInput<'_>) -> Result<Report, ReportError> {
    let mut rules = HashMap::new();
    for t in input.triggers {
        let rule = NormalizedRule::compile(&t.rule).map_err(|source| ReportError::Rule {
            trigger_id: t.trigger_id.clone(),
            source,
        })?;
        rules.insert(t.trigger_id.as_str(), rule);
    }

    let mut known: HashSet<&str> = input.events.iter().map(|e| e.event_id.as_str()).collect();
    if let Some(arrivals) = input.arrivals {
        known.extend(arrivals.iter().map(|a| a.event_id.as_str()));
    }
    for f in input.firings {
        if !rules.contains_key(f.trigger_id.as_str()) {
            return Err(ReportError::UnknownTrigger(f.trigger_id.clone()));
        }
        for id in f.events.values().flatten() {
            if !known.contains(id.as_str()) {
                return Err(ReportError::UnknownEvent {
                    firing: key(&f.trigger_id, &f.fulfilling_event_id),
                    event_id: id.clone(),
                });
            }
        }
    }

    let (expected, source) = expected_firings(input, &rules);
    let oracle_diff = diff(&expected, input.firings);

    let mut firings_per_case: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for t in input.triggers {
        let n = rules[t.trigger_id.as_str()].cases.len();
        firings_per_case.insert(t.trigger_id.clone(), vec![0; n]);
    }
    for f in input.firings {
        if let Some(c) = firings_per_case
            .get_mut(&f.trigger_id)
            .and_then(|v| v.get_mut(f.case_index))
        {
            *c += 1;
        }
    }

    let ratio = InvocationRatio {
        events: input.events.len() as u64,
        firings: input.firings.len() as u64,
    };
    let span_ns = match (
        input.events.iter().map(|e| e.created_at).min(),
        input.events.iter().map(|e| e.acked_at).max(),
    ) {
        (Some(a), Some(b)) => (b - a).max(0),
        _ => 0,
    };
    let duration_seconds = (span_ns as f64 / 1e9).max(input.duration_seconds.unwrap_or(0.0));
    let throughput_eps = if duration_seconds > 0.0 {
        input.events.len() as f64 / duration_seconds
    } else {
        0.0
    };

    let report = Report {
        events: ratio.events,
        firings: ratio.firings,
        invocation_ratio: ratio.value(),
        firings_per_case,
        failed_invocations: input.firings.iter().filter(|f| f.status >= 400).count() as u64,
        latency: Distribution::from_ns(input.firings.iter().filter_map(|f| f.latency_ns()), true),
        ack_latency: Distribution::from_ns(
            input.events.iter().map(|e| e.acked_at - e.created_at),
            false,
        ),
        throughput_eps,
        duration_seconds,
        oracle_source: source.into(),
        oracle_diff,
    };
    if report.oracle_diff.is_clean() {
        Ok(report)
    } else {
        Err(ReportError::Mismatch(Box::new(report)))
    }
}

fn key(trigger_id: &str, event_id: &str) -> String {
    format!("{trigger_id}/{event_id}")
}

/// Oracle firings keyed by `trigger/fulfillingEventId`. Each event reaches
/// exactly one replica of a trigger, so the key is unique across replicas.
fn expected_firings(
    input: &ReportInput<'_>,
    rules: &HashMap<&str, NormalizedRule>,
) -> (BTreeMap<String, FiringSignature>, &'static str) {
    let mut out = BTreeMap::new();
    match input.arrivals {
        Some(arrivals) => {
            let mut streams: BTreeMap<(&str, &str), Vec<&ArrivalLogRecord>> = BTreeMap::new();
            for a in arrivals {
                streams
                    .entry((a.trigger_id.as_str(), a.replica.as_str()))
                    .or_default()
                    .push(a);
            }
            for ((trigger_id, _), mut recs) in streams {
                let Some(rule) = rules.get(trigger_id) else {
                    continue;
                };
                recs.sort_by_key(|a| a.arrival_seq);
                let events: Vec<Event> = recs.iter().map(|a| a.to_event()).collect();
                for f in oracle::replay_compiled(rule, &events) {
                    out.insert(key(trigger_id, &f.fulfilling_event_id), f.signature());
                }
            }
            (out, "arrivalLog")
        }
        None => {
            let events: Vec<Event> = input.events.iter().map(|e| e.to_event()).collect();
            for t in input.triggers {
                let rule = &rules[t.trigger_id.as_str()];
                for f in oracle::replay_compiled(rule, &events) {
                    out.insert(key(&t.trigger_id, &f.fulfilling_event_id), f.signature());
                }
            }
            (out, "eventLog")
        }
    }
}

fn diff(expected: &BTreeMap<String, FiringSignature>, firings: &[FiringLogRecord]) -> OracleDiff {
    let mut d = OracleDiff {
        expected: expected.len(),
        observed: firings.len(),
        ..OracleDiff::default()
    };
    let mut seen = HashSet::new();
    for f in firings {
        let k = key(&f.trigger_id, &f.fulfilling_event_id);
        if !seen.insert(k.clone()) {
            d.unexpected.push(k);
            continue;
        }
        match expected.get(&k) {
            None => d.unexpected.push(k),
            Some(sig) if sig.case_index == f.case_index && sig.consumed == f.events => {
                d.matched += 1
            }
            Some(_) => d.mismatched.push(k),
        }
    }
    d.missing = expected
        .keys()
        .filter(|k| !seen.contains(*k))
        .cloned()
        .collect();
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, t: &str, at: i64) -> EventLogRecord {
        EventLogRecord {
            event_id: id.into(),
            event_type: t.into(),
            created_at: at,
            acked_at: at + 1_000_000,
            delivered_to: 1,
            payload_bytes: 0,
        }
    }

    fn firing(trigger: &str, case: usize, consumed: &[(&str, &[&str])], at: i64) -> FiringLogRecord {
        let events: BTreeMap<String, Vec<String>> = consumed
            .iter()
            .map(|(t, ids)| (t.to_string(), ids.iter().map(|s| s.to_string()).collect()))
            .collect();
        let last = consumed.iter().flat_map(|(_, ids)| ids.iter()).max().unwrap();
        FiringLogRecord {
            trigger_id: trigger.into(),
            case_index: case,
            fulfilling_event_id: last.to_string(),
            fulfilling_created_at: Some(at),
            events,
            fired_at: at,
            received_at: at + 2_000_000,
            status: 200,
        }
    }

    fn triggers(rule: &str) -> Vec<TriggerRecord> {
        vec![TriggerRecord {
            trigger_id: "t".into(),
            rule: rule.into(),
        }]
    }

    #[test]
    fn clean_run() {
        let events: Vec<_> = (0..6).map(|i| ev(&format!("e{i}"), "a", i * 1000)).collect();
        let firings = vec![
            firing("t", 0, &[("a", &["e0", "e1", "e2"])], 2000),
            firing("t", 0, &[("a", &["e3", "e4", "e5"])], 5000),
        ];
        let tr = triggers("3:a");
        let r = build(&ReportInput {
            events: &events,
            firings: &firings,
            triggers: &tr,
            arrivals: None,
            duration_seconds: Some(10.0),
        })
        .unwrap();
        assert_eq!(r.invocation_ratio, Some(3.0));
        assert_eq!(r.oracle_diff.matched, 2);
        assert_eq!(r.latency.median_ms, Some(2.0));
        assert_eq!(r.latency.cdf.len(), 101);
        assert!((r.throughput_eps - 0.6).abs() < 1e-9);
        assert_eq!(r.firings_per_case["t"], vec![2]);
    }

    #[test]
    fn missing_firings_are_fatal() {
        let events = vec![ev("e0", "a", 0), ev("e1", "a", 1)];
        let tr = triggers("1:a");
        let err = build(&ReportInput {
            events: &events,
            firings: &[],
            triggers: &tr,
            arrivals: None,
            duration_seconds: None,
        })
        .unwrap_err();
        match err {
            ReportError::Mismatch(r) => assert_eq!(r.oracle_diff.missing.len(), 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_consumption_is_a_mismatch() {
        let events: Vec<_> = (0..4).map(|i| ev(&format!("e{i}"), "a", i)).collect();
        let firings = vec![firing("t", 0, &[("a", &["e1", "e0"])], 1)];
        let tr = triggers("2:a");
        let err = build(&ReportInput {
            events: &events,
            firings: &firings,
            triggers: &tr,
            arrivals: None,
            duration_seconds: None,
        })
        .unwrap_err();
        let ReportError::Mismatch(r) = err else { panic!() };
        assert_eq!(r.oracle_diff.mismatched, vec!["t/e1"]);
        assert_eq!(r.oracle_diff.missing, vec!["t/e3"]);
    }

    #[test]
    fn unexplained_event_is_fatal() {
        let events = vec![ev("e0", "a", 0)];
        let firings = vec![firing("t", 0, &[("a", &["zz"])], 0)];
        let tr = triggers("1:a");
        let err = build(&ReportInput {
            events: &events,
            firings: &firings,
            triggers: &tr,
            arrivals: None,
            duration_seconds: None,
        })
        .unwrap_err();
        assert!(matches!(err, ReportError::UnknownEvent { .. }));
    }

    #[test]
    fn replicas_replayed_separately() {
        // two replicas of 2:a, events alternate between them
        let events: Vec<_> = (0..4).map(|i| ev(&format!("e{i}"), "a", i)).collect();
        let arrivals: Vec<ArrivalLogRecord> = (0..4)
            .map(|i| ArrivalLogRecord {
                replica: if i % 2 == 0 { "r0" } else { "r1" }.into(),
                trigger_id: "t".into(),
                arrival_seq: i as u64 / 2,
                event_id: format!("e{i}"),
                event_type: "a".into(),
                created_at: i,
            })
            .collect();
        let firings = vec![
            firing("t", 0, &[("a", &["e0", "e2"])], 2),
            firing("t", 0, &[("a", &["e1", "e3"])], 3),
        ];
        let tr = triggers("2:a");
        let input = ReportInput {
            events: &events,
            firings: &firings,
            triggers: &tr,
            arrivals: Some(&arrivals),
            duration_seconds: None,
        };
        let r = build(&input).unwrap();
        assert_eq!(r.oracle_source, "arrivalLog");
        assert_eq!(r.oracle_diff.matched, 2);
        // the same firings are wrong for a single serialized stream
        let single = ReportInput {
            arrivals: None,
            ..input
        };
        assert!(build(&single).is_err());
    }

    #[test]
    fn percentiles() {
        let v: Vec<i64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.5), Some(50));
        assert_eq!(percentile(&v, 0.99), Some(99));
        assert_eq!(percentile(&v, 0.0), Some(1));
        assert_eq!(percentile(&v, 1.0), Some(100));
        assert_eq!(percentile(&[], 0.5), None);
    }
}
