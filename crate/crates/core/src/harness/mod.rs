//! Simulation, auditing and experiment drivers.

pub mod audit;
pub mod baseline;
pub mod consistency;
pub mod experiments;
pub mod propagation;
pub mod script;
pub mod workload;

pub use audit::{audit_trace, two_sample_p_value, AuditConfig, AuditReport};
pub use baseline::{baseline_store, BaselineStore};
pub use consistency::{crash_consistency, expected_shadow_table, shadow_walkthrough, CrashReport, ViewRow};
pub use experiments::{
    bench_buffer, bench_latency, bench_throughput, median_latency, validate_theorem1, BufferConfig, LatencyConfig,
    Sim, SizeModel, Theorem1Config, ThroughputConfig, VisibilityConfig, VisibilityResult, VisibilityRow, visibility_lag,
};
pub use propagation::{Delay, PropagationSim};
pub use script::{run_script, FsequenceScript, ScriptOp};
