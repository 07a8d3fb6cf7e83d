//! Per-trigger state: one FIFO trigger set per event type of the rule.
//!
//! A handler is quiescent between ingests: no case of its rule is satisfied by
//! the current trigger-set sizes. An arrival raises exactly one set's size by
//! one, so only cases mentioning that type can become satisfied, and firing
//! the lowest such case consumes at least one event of that type and only
//! ever removes events, leaving every set at or below its size before the
//! arrival. One check per arrival is therefore enough.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{now_ns, Event};
use crate::rule::NormalizedRule;

/// Default per-type trigger-set limit before ingest reports backpressure.
pub const DEFAULT_HIGH_WATER_MARK: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriggerError {
    #[error("trigger id {0} is already in use")]
    DuplicateTriggerId(String),
    #[error("unknown trigger {0}")]
    UnknownTrigger(String),
    #[error("event type {event_type} is not part of the rule of trigger {trigger_id}")]
    UnknownEventType {
        trigger_id: String,
        event_type: String,
    },
    #[error("trigger set for {event_type} is full ({limit} events)")]
    Backpressure { event_type: String, limit: usize },
}

/// One fulfillment of a trigger rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringRecord {
    pub trigger_id: String,
    pub case_index: usize,
    /// Consumed events per type, oldest first.
    pub consumed: BTreeMap<String, Vec<Event>>,
    pub fired_at: i64,
    pub fulfilling_event_id: String,
}

impl FiringRecord {
    /// The parts of a firing that must agree between two evaluators of the
    /// same arrival sequence: case index plus consumed event ids.
    pub fn signature(&self) -> FiringSignature {
        FiringSignature {
            case_index: self.case_index,
            consumed: self
                .consumed
                .iter()
                .map(|(t, evs)| (t.clone(), evs.iter().map(|e| e.id.clone()).collect()))
                .collect(),
        }
    }

    pub fn consumed_count(&self) -> usize {
        self.consumed.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FiringSignature {
    pub case_index: usize,
    pub consumed: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HandlerStats {
    pub events_received: u64,
    pub firings_per_case: Vec<u64>,
}

impl HandlerStats {
    pub fn total_firings(&self) -> u64 {
        self.firings_per_case.iter().sum()
    }
}

/// Point-in-time view of a handler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HandlerSnapshot {
    pub trigger_id: String,
    pub queue_lengths: BTreeMap<String, usize>,
    pub stats: HandlerStats,
}

impl HandlerSnapshot {
    pub fn queued(&self) -> usize {
        self.queue_lengths.values().sum()
    }
}

#[derive(Debug)]
pub struct TriggerHandler {
    trigger_id: String,
    rule: NormalizedRule,
    function_url: String,
    types: Vec<String>,
    slots: HashMap<String, usize>,
    sets: Vec<VecDeque<Event>>,
    /// Cases as (slot, count) lists, indexed by case index.
    cases: Vec<Vec<(usize, usize)>>,
    /// For each slot, the cases mentioning it in ascending order.
    cases_by_slot: Vec<Vec<usize>>,
    next_seq: u64,
    high_water_mark: usize,
    stats: HandlerStats,
}

impl TriggerHandler {
    pub fn new(
        trigger_id: impl Into<String>,
        rule: NormalizedRule,
        function_url: impl Into<String>,
    ) -> Self {
        let types = rule.event_types();
        let slots: HashMap<String, usize> = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let cases: Vec<Vec<(usize, usize)>> = rule
            .cases
            .iter()
            .map(|c| {
                c.requirements
                    .iter()
                    .map(|(t, &n)| (slots[t], n as usize))
                    .collect()
            })
            .collect();
        let mut cases_by_slot = vec![Vec::new(); types.len()];
        for (ci, case) in cases.iter().enumerate() {
            for &(slot, _) in case {
                cases_by_slot[slot].push(ci);
            }
        }
        TriggerHandler {
            trigger_id: trigger_id.into(),
            function_url: function_url.into(),
            sets: vec![VecDeque::new(); types.len()],
            stats: HandlerStats {
                events_received: 0,
                firings_per_case: vec![0; rule.cases.len()],
            },
            rule,
            types,
            slots,
            cases,
            cases_by_slot,
            next_seq: 0,
            high_water_mark: DEFAULT_HIGH_WATER_MARK,
        }
    }

    pub fn with_high_water_mark(mut self, limit: usize) -> Self {
        self.high_water_mark = limit.max(1);
        self
    }

    pub fn trigger_id(&self) -> &str {
        &self.trigger_id
    }

    pub fn rule(&self) -> &NormalizedRule {
        &self.rule
    }

    pub fn function_url(&self) -> &str {
        &self.function_url
    }

    pub fn event_types(&self) -> &[String] {
        &self.types
    }

    pub fn stats(&self) -> &HandlerStats {
        &self.stats
    }

    pub fn queue_len(&self, event_type: &str) -> Option<usize> {
        self.slots.get(event_type).map(|&s| self.sets[s].len())
    }

    /// Events currently held for `event_type`, oldest first.
    pub fn queued(&self, event_type: &str) -> impl Iterator<Item = &Event> {
        self.slots
            .get(event_type)
            .into_iter()
            .flat_map(|&s| self.sets[s].iter())
    }

    /// Stores `event` and fires the first satisfied case, if any.
    pub fn ingest(&mut self, mut event: Event) -> Result<Option<FiringRecord>, TriggerError> {
        let Some(&slot) = self.slots.get(&event.event_type) else {
            return Err(TriggerError::UnknownEventType {
                trigger_id: self.trigger_id.clone(),
                event_type: event.event_type,
            });
        };
        if self.sets[slot].len() >= self.high_water_mark {
            return Err(TriggerError::Backpressure {
                event_type: event.event_type,
                limit: self.high_water_mark,
            });
        }
        event.arrival_seq = self.next_seq;
        self.next_seq += 1;
        let fulfilling_event_id = event.id.clone();
        self.sets[slot].push_back(event);
        self.stats.events_received += 1;

        let Some(case_index) = self.cases_by_slot[slot]
            .iter()
            .copied()
            .find(|&ci| self.case_satisfied(ci))
        else {
            return Ok(None);
        };

        let mut consumed = BTreeMap::new();
        for &(s, n) in &self.cases[case_index] {
            let taken: Vec<Event> = self.sets[s].drain(..n).collect();
            consumed.insert(self.types[s].clone(), taken);
        }
        self.stats.firings_per_case[case_index] += 1;
        debug_assert!(self.is_quiescent());

        Ok(Some(FiringRecord {
            trigger_id: self.trigger_id.clone(),
            case_index,
            consumed,
            fired_at: now_ns(),
            fulfilling_event_id,
        }))
    }

    fn case_satisfied(&self, case_index: usize) -> bool {
        self.cases[case_index]
            .iter()
            .all(|&(s, n)| self.sets[s].len() >= n)
    }

    /// True when no case is satisfied by the current trigger sets.
    pub fn is_quiescent(&self) -> bool {
        (0..self.cases.len()).all(|ci| !self.case_satisfied(ci))
    }

    pub fn snapshot(&self) -> HandlerSnapshot {
        HandlerSnapshot {
            trigger_id: self.trigger_id.clone(),
            queue_lengths: self
                .types
                .iter()
                .zip(&self.sets)
                .map(|(t, q)| (t.clone(), q.len()))
                .collect(),
            stats: self.stats.clone(),
        }
    }

    /// Drops every queued event, returning how many there were.
    pub fn clear(&mut self) -> usize {
        self.sets.iter_mut().map(|q| std::mem::take(q).len()).sum()
    }
}

/// Single-threaded collection of handlers keyed by trigger id.
#[derive(Debug, Default)]
pub struct HandlerSet {
    handlers: BTreeMap<String, TriggerHandler>,
}

impl HandlerSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_handler(
        &mut self,
        trigger_id: &str,
        rule: NormalizedRule,
        function_url: &str,
    ) -> Result<&mut TriggerHandler, TriggerError> {
        use std::collections::btree_map::Entry;
        match self.handlers.entry(trigger_id.to_string()) {
            Entry::Occupied(_) => Err(TriggerError::DuplicateTriggerId(trigger_id.to_string())),
            Entry::Vacant(v) => Ok(v.insert(TriggerHandler::new(trigger_id, rule, function_url))),
        }
    }

    pub fn get(&self, trigger_id: &str) -> Option<&TriggerHandler> {
        self.handlers.get(trigger_id)
    }

    pub fn ingest(
        &mut self,
        trigger_id: &str,
        event: Event,
    ) -> Result<Option<FiringRecord>, TriggerError> {
        self.handlers
            .get_mut(trigger_id)
            .ok_or_else(|| TriggerError::UnknownTrigger(trigger_id.to_string()))?
            .ingest(event)
    }

    pub fn remove(&mut self, trigger_id: &str) -> Result<TriggerHandler, TriggerError> {
        self.handlers
            .remove(trigger_id)
            .ok_or_else(|| TriggerError::UnknownTrigger(trigger_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.handlers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handlers.is_empty()
    }
}
