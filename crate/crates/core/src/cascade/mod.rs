//! Ordered verifier cascades, stepwise relaxation and their accounting.

pub mod config;
pub mod fsr;
pub mod metrics;
pub mod run;

pub use config::{parse_stages, CascadeConfig, FsrConfig, StageSpec, Submethod, Timing};
pub use fsr::{calibrate_fsr, calibration_size, plan_from_improvements, SkipPlan};
pub use metrics::{compute_metrics, Metrics, MetricsInput, OracleSets, StageMetrics, StageRecord};
pub use run::{
    attack_dataset, crv_verify, exact_margins, oracle_labels, robustness_check, with_thread_cap, BaselineRun,
    CascadeRun, InputVerdict, SkipReason, StageOutcome, TraceEntry, VerdictStatus,
};
