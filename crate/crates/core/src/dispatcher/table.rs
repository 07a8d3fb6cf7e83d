use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::rule::is_valid_event_type;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubscriptionError {
    #[error("subscription lists no event types")]
    NoEventTypes,
    #[error("subscription lists no replica endpoints")]
    NoReplicas,
    #[error("invalid event type {0:?}")]
    InvalidEventType(String),
    #[error("empty trigger id")]
    EmptyTriggerId,
}

/// Where one trigger's events of one type go. The cursor advances on every
/// pick, so successive events alternate over the replicas.
#[derive(Debug)]
pub struct Route {
    pub trigger_id: String,
    pub replica_endpoints: Vec<String>,
    next_replica: AtomicUsize,
}

impl Route {
    fn new(trigger_id: String, replica_endpoints: Vec<String>) -> Self {
        Route {
            trigger_id,
            replica_endpoints,
            next_replica: AtomicUsize::new(0),
        }
    }

    /// Picks the replica for the next event (round-robin).
    pub fn next_endpoint(&self) -> &str {
        let n = self.next_replica.fetch_add(1, Ordering::Relaxed);
        &self.replica_endpoints[n % self.replica_endpoints.len()]
    }

    pub fn cursor(&self) -> usize {
        self.next_replica.load(Ordering::Relaxed) % self.replica_endpoints.len()
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SubscriptionView {
    pub event_type: String,
    pub trigger_id: String,
    pub replica_endpoints: Vec<String>,
    pub next_replica: usize,
}

/// Event type → subscribed triggers. Cheap to clone: routes are shared, so a
/// modified copy keeps the round-robin position of untouched routes.
#[derive(Debug, Clone, Default)]
pub struct SubscriptionTable {
    by_type: HashMap<String, Vec<Arc<Route>>>,
}

impl SubscriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Subscribes `trigger_id` to `event_types`, replacing any previous
    /// subscription of the same trigger.
    pub fn subscribe(
        &mut self,
        trigger_id: &str,
        event_types: &[String],
        replica_endpoints: &[String],
    ) -> Result<(), SubscriptionError> {
        if trigger_id.is_empty() {
            return Err(SubscriptionError::EmptyTriggerId);
        }
        if event_types.is_empty() {
            return Err(SubscriptionError::NoEventTypes);
        }
        if replica_endpoints.is_empty() {
            return Err(SubscriptionError::NoReplicas);
        }
        if let Some(bad) = event_types.iter().find(|t| !is_valid_event_type(t)) {
            return Err(SubscriptionError::InvalidEventType(bad.clone()));
        }
        self.unsubscribe(trigger_id);
        let mut types = event_types.to_vec();
        types.sort();
        types.dedup();
        for t in types {
            self.by_type.entry(t).or_default().push(Arc::new(Route::new(
                trigger_id.to_string(),
                replica_endpoints.to_vec(),
            )));
        }
        Ok(())
    }

    /// Removes every route of `trigger_id`; false if there was none.
    pub fn unsubscribe(&mut self, trigger_id: &str) -> bool {
        let mut found = false;
        self.by_type.retain(|_, routes| {
            let before = routes.len();
            routes.retain(|r| r.trigger_id != trigger_id);
            found |= routes.len() != before;
            !routes.is_empty()
        });
        found
    }

    pub fn routes(&self, event_type: &str) -> &[Arc<Route>] {
        self.by_type.get(event_type).map_or(&[], Vec::as_slice)
    }

    pub fn views(&self) -> Vec<SubscriptionView> {
        let mut out: Vec<SubscriptionView> = self
            .by_type
            .iter()
            .flat_map(|(t, routes)| {
                routes.iter().map(move |r| SubscriptionView {
                    event_type: t.clone(),
                    trigger_id: r.trigger_id.clone(),
                    replica_endpoints: r.replica_endpoints.clone(),
                    next_replica: r.cursor(),
                })
            })
            .collect();
        out.sort_by(|a, b| (&a.event_type, &a.trigger_id).cmp(&(&b.event_type, &b.trigger_id)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn subscribe_routes_by_type() {
        let mut t = SubscriptionTable::new();
        t.subscribe("t1", &s(&["a", "b"]), &s(&["inv1"])).unwrap();
        assert_eq!(t.routes("a").len(), 1);
        assert_eq!(t.routes("a")[0].next_endpoint(), "inv1");
        assert!(t.routes("c").is_empty());
    }

    #[test]
    fn round_robin_alternates() {
        let mut t = SubscriptionTable::new();
        t.subscribe("t1", &s(&["a"]), &s(&["inv1", "inv2"])).unwrap();
        let picks: Vec<&str> = (0..4).map(|_| t.routes("a")[0].next_endpoint()).collect();
        assert_eq!(picks, ["inv1", "inv2", "inv1", "inv2"]);
    }

    #[test]
    fn unsubscribe_removes_all_types() {
        let mut t = SubscriptionTable::new();
        t.subscribe("t1", &s(&["a", "b"]), &s(&["inv1"])).unwrap();
        t.subscribe("t2", &s(&["a"]), &s(&["inv1"])).unwrap();
        assert!(t.unsubscribe("t1"));
        assert_eq!(t.routes("a").len(), 1);
        assert!(t.routes("b").is_empty());
        assert!(!t.unsubscribe("t1"));
    }

    #[test]
    fn resubscribe_does_not_duplicate() {
        let mut t = SubscriptionTable::new();
        t.subscribe("t1", &s(&["a", "a"]), &s(&["inv1"])).unwrap();
        t.subscribe("t1", &s(&["a"]), &s(&["inv2"])).unwrap();
        assert_eq!(t.routes("a").len(), 1);
        assert_eq!(t.routes("a")[0].replica_endpoints, s(&["inv2"]));
    }

    #[test]
    fn malformed_announcements() {
        let mut t = SubscriptionTable::new();
        assert_eq!(
            t.subscribe("t1", &[], &s(&["inv1"])),
            Err(SubscriptionError::NoEventTypes)
        );
        assert_eq!(
            t.subscribe("t1", &s(&["a"]), &[]),
            Err(SubscriptionError::NoReplicas)
        );
        assert_eq!(
            t.subscribe("t1", &s(&["a1"]), &s(&["inv1"])),
            Err(SubscriptionError::InvalidEventType("a1".into()))
        );
        assert_eq!(
            t.subscribe("", &s(&["a"]), &s(&["inv1"])),
            Err(SubscriptionError::EmptyTriggerId)
        );
    }

    #[test]
    fn clones_share_cursors() {
        let mut t = SubscriptionTable::new();
        t.subscribe("t1", &s(&["a"]), &s(&["x", "y"])).unwrap();
        let snapshot = t.clone();
        assert_eq!(snapshot.routes("a")[0].next_endpoint(), "x");
        t.subscribe("t2", &s(&["b"]), &s(&["z"])).unwrap();
        assert_eq!(t.routes("a")[0].next_endpoint(), "y");
    }
}
