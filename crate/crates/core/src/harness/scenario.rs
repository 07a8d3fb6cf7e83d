use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rule::is_valid_event_type;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventStream {
    pub event_type: String,
    pub rate_per_minute: f64,
    #[serde(default)]
    pub payload_bytes: usize,
    #[serde(default = "one")]
    pub virtual_users: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerSpec {
    pub rule: String,
    /// Function URL; the harness sink when absent.
    #[serde(default)]
    pub function_url: Option<String>,
    #[serde(default = "one")]
    pub partitions: usize,
    /// Register this many identical copies.
    #[serde(default = "one")]
    pub copies: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Topology {
    pub dispatchers: usize,
    pub invokers: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            dispatchers: 1,
            invokers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scenario {
    pub name: String,
    pub event_streams: Vec<EventStream>,
    pub duration_seconds: f64,
    pub triggers: Vec<TriggerSpec>,
    #[serde(default)]
    pub topology: Topology,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("stream {0}: rate must be a finite non-negative number")]
    Rate(String),
    #[error("invalid event type {0:?}")]
    EventType(String),
    #[error("topology needs at least one dispatcher and one invoker")]
    Topology,
    #[error("trigger {rule}: partitions must be between 1 and {invokers}")]
    Partitions { rule: String, invokers: usize },
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return Err(ScenarioError::Duration(self.duration_seconds));
        }
        for s in &self.event_streams {
            if !is_valid_event_type(&s.event_type) {
                return Err(ScenarioError::EventType(s.event_type.clone()));
            }
            if !(s.rate_per_minute >= 0.0 && s.rate_per_minute.is_finite()) {
                return Err(ScenarioError::Rate(s.event_type.clone()));
            }
        }
        if self.topology.dispatchers == 0 || self.topology.invokers == 0 {
            return Err(ScenarioError::Topology);
        }
        for t in &self.triggers {
            if t.partitions == 0 || t.partitions > self.topology.invokers {
                return Err(ScenarioError::Partitions {
                    rule: t.rule.clone(),
                    invokers: self.topology.invokers,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Data-center incident detection: three sensor types feeding one rule.
    pub fn incident_detection(duration_seconds: f64) -> Self {
        let stream = |t: &str, rate: f64, bytes: usize, vus: usize| EventStream {
            event_type: t.into(),
            rate_per_minute: rate,
            payload_bytes: bytes,
            virtual_users: vus,
        };
        Scenario {
            name: "incident-detection".into(),
            event_streams: vec![
                stream("packetLoss", 180.0, 8, 20),
                stream("temperature", 36.0, 25 * 8, 10),
                stream("powerConsumption", 18.0, 8, 10),
            ],
            duration_seconds,
            triggers: vec![TriggerSpec {
                rule: "OR(AND(5:packetLoss,1:temperature),1:powerConsumption)".into(),
                function_url: None,
                partitions: 1,
                copies: 1,
            }],
            topology: Topology {
                dispatchers: 3,
                invokers: 1,
            },
        }
    }

    /// Single event type with 1,024-byte payloads into `3:a`, optionally
    /// partitioned over `invokers` replicas.
    pub fn concurrent_requests(duration_seconds: f64, virtual_users: usize, invokers: usize) -> Self {
        Scenario {
            name: "concurrent-requests".into(),
            event_streams: vec![EventStream {
                event_type: "a".into(),
                rate_per_minute: 0.0,
                payload_bytes: 1024,
                virtual_users,
            }],
            duration_seconds,
            triggers: vec![TriggerSpec {
                rule: "3:a".into(),
                function_url: None,
                partitions: invokers,
                copies: 1,
            }],
            topology: Topology {
                dispatchers: 1,
                invokers,
            },
        }
    }

    /// `copies` identical `AND(2:a,2:b)` triggers on one invoker, users split
    /// evenly over `a` and `b`.
    pub fn concurrent_triggers(duration_seconds: f64, copies: usize, virtual_users: usize) -> Self {
        let half = (virtual_users / 2).max(1);
        let stream = |t: &str| EventStream {
            event_type: t.into(),
            rate_per_minute: 0.0,
            payload_bytes: 1024,
            virtual_users: half,
        };
        Scenario {
            name: "concurrent-triggers".into(),
            event_streams: vec![stream("a"), stream("b")],
            duration_seconds,
            triggers: vec![TriggerSpec {
                rule: "AND(2:a,2:b)".into(),
                function_url: None,
                partitions: 1,
                copies,
            }],
            topology: Topology::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Scenario::incident_detection(600.0).validate().unwrap();
        Scenario::concurrent_requests(60.0, 64, 2).validate().unwrap();
        Scenario::concurrent_triggers(60.0, 1024, 128).validate().unwrap();
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = Scenario::incident_detection(60.0);
        s.duration_seconds = 0.0;
        assert_eq!(s.validate(), Err(ScenarioError::Duration(0.0)));
        let mut s = Scenario::incident_detection(60.0);
        s.event_streams[0].rate_per_minute = -1.0;
        assert!(matches!(s.validate(), Err(ScenarioError::Rate(_))));
        let mut s = Scenario::incident_detection(60.0);
        s.triggers[0].partitions = 2;
        assert!(matches!(s.validate(), Err(ScenarioError::Partitions { .. })));
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::incident_detection(600.0);
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
        let minimal = r#"{"name":"x","eventStreams":[{"eventType":"a","ratePerMinute":60}],
            "durationSeconds":10,"triggers":[{"rule":"3:a"}]}"#;
        let s = Scenario::from_json(minimal).unwrap();
        assert_eq!(s.topology, Topology::default());
        assert_eq!(s.event_streams[0].virtual_users, 1);
        assert_eq!(s.triggers[0].partitions, 1);
    }
}
