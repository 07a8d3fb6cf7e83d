//! Reference evaluators for trigger rules.
//!
//! Both evaluators here are single-threaded and deliberately simple. They
//! apply the same semantics as [`crate::trigger::TriggerHandler`]: FIFO
//! consumption, lowest satisfied case wins, repeated types within a case add
//! up. [`replay`] keeps per-type queues; [`replay_rescan`] keeps one flat
//! pending list and recounts it for every case on every arrival. Events whose
//! type the rule does not mention are skipped, the way a dispatcher would
//! never route them.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::event::Event;
use crate::rule::{NormalizedRule, RuleError};
use crate::trigger::FiringRecord;

/// Replays `events` in order against `rule_text`, returning every firing.
pub fn replay(rule_text: &str, events: &[Event]) -> Result<Vec<FiringRecord>, RuleError> {
    let rule = NormalizedRule::compile(rule_text)?;
    Ok(replay_compiled(&rule, events))
}

pub fn replay_compiled(rule: &NormalizedRule, events: &[Event]) -> Vec<FiringRecord> {
    let mut sets: BTreeMap<String, VecDeque<Event>> = rule
        .event_types()
        .into_iter()
        .map(|t| (t, VecDeque::new()))
        .collect();
    let mut firings = Vec::new();
    let mut seq = 0u64;
    for event in events {
        let Some(queue) = sets.get_mut(&event.event_type) else {
            continue;
        };
        let mut stored = event.clone();
        stored.arrival_seq = seq;
        seq += 1;
        queue.push_back(stored);

        let fired = rule.first_satisfied(|t| sets.get(t).map_or(0, VecDeque::len));
        if let Some(case_index) = fired {
            let mut consumed = BTreeMap::new();
            for (t, &n) in &rule.cases[case_index].requirements {
                let queue = sets.get_mut(t).expect("rule type has a queue");
                consumed.insert(t.clone(), queue.drain(..n as usize).collect());
            }
            firings.push(FiringRecord {
                trigger_id: String::new(),
                case_index,
                consumed,
                fired_at: event.created_at,
                fulfilling_event_id: event.id.clone(),
            });
        }
    }
    firings
}

/// Same semantics as [`replay`], computed by rescanning every pending event
/// for every case on every arrival.
pub fn replay_rescan(rule_text: &str, events: &[Event]) -> Result<Vec<FiringRecord>, RuleError> {
    let rule = NormalizedRule::compile(rule_text)?;
    let types = rule.event_types();
    let mut pending: Vec<Event> = Vec::new();
    let mut firings = Vec::new();
    let mut seq = 0u64;
    for event in events {
        if !types.contains(&event.event_type) {
            continue;
        }
        let mut stored = event.clone();
        stored.arrival_seq = seq;
        seq += 1;
        pending.push(stored);

        for case in &rule.cases {
            let satisfied = case.requirements.iter().all(|(t, &n)| {
                pending.iter().filter(|e| &e.event_type == t).count() >= n as usize
            });
            if !satisfied {
                continue;
            }
            let mut remaining = case.requirements.clone();
            let mut consumed: BTreeMap<String, Vec<Event>> = BTreeMap::new();
            let mut keep = Vec::with_capacity(pending.len());
            for e in pending.drain(..) {
                match remaining.get_mut(&e.event_type) {
                    Some(left) if *left > 0 => {
                        *left -= 1;
                        consumed.entry(e.event_type.clone()).or_default().push(e);
                    }
                    _ => keep.push(e),
                }
            }
            pending = keep;
            firings.push(FiringRecord {
                trigger_id: String::new(),
                case_index: case.case_index,
                consumed,
                fired_at: event.created_at,
                fulfilling_event_id: event.id.clone(),
            });
            break;
        }
    }
    Ok(firings)
}

/// Ratio of per-event invocations to rule firings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InvocationRatio {
    pub events: u64,
    pub firings: u64,
}

impl InvocationRatio {
    /// `None` when nothing fired.
    pub fn value(&self) -> Option<f64> {
        (self.firings > 0).then(|| self.events as f64 / self.firings as f64)
    }
}

impl fmt::Display for InvocationRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{}/{} = {v:.4}", self.events, self.firings),
            None => write!(f, "{}/0 = undefined", self.events),
        }
    }
}

/// How many more invocations a one-invocation-per-event function needs than
/// the trigger: all of `events` against the replayed firings.
pub fn invocation_ratio(rule_text: &str, events: &[Event]) -> Result<InvocationRatio, RuleError> {
    let firings = replay(rule_text, events)?;
    Ok(InvocationRatio {
        events: events.len() as u64,
        firings: firings.len() as u64,
    })
}
