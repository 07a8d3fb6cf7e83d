//! Multi-event triggers for FaaS functions.
//!
//! Events are accepted by stateless [`dispatcher`]s, routed by event type to
//! the [`invoker`] hosting each trigger, collected into per-type trigger sets
//! by a [`trigger::TriggerHandler`], and delivered to the trigger's function
//! over HTTP once its [`rule`] is fulfilled. [`oracle`] replays logs with the
//! same semantics for verification and [`harness`] drives experiments.

pub mod api;
pub mod dispatcher;
pub mod event;
pub mod harness;
pub mod invoker;
pub mod logs;
pub mod oracle;
pub mod rule;
pub mod trigger;
pub mod wire;

pub use event::Event;
pub use rule::{normalize, parse, render, NormalizedRule, RuleAst, RuleError};
pub use trigger::{FiringRecord, TriggerError, TriggerHandler};
