//! Deterministic discrete-event simulation of a serving policy on the NPU
//! model, with metrics computed from the event log.

mod engine;
mod event;
mod metrics;

pub use engine::{run_simulation, SimConfig, SimOutcome};
pub use event::{parse_json_lines, to_json_lines, EventKind, LogRecord};
pub use metrics::{audit_preemptions, compute_metrics, latencies, nearest_rank, MetricsOptions, MetricsReport, PreemptionAudit};
