//! Workload generator, mock function sink, reporter and cluster orchestration.

pub mod bench;
pub mod cluster;
pub mod generate;
pub mod report;
pub mod run;
pub mod scenario;
pub mod schedule;
pub mod sink;

pub use generate::{generate, GenerateOptions, GenerateOutcome};
pub use report::{Report, ReportError, ReportInput, TriggerRecord};
pub use scenario::{EventStream, Scenario, ScenarioError, Topology, TriggerSpec};
pub use schedule::ScheduleMode;
