//! Cascading certified-robustness verification for one-hidden-layer ReLU
//! classifiers.
//!
//! The crate chains incomplete verifiers of increasing cost and tightness:
//!
//! - interval pre-activation bounds ([`bounds`]),
//! - a closed-form triangle-relaxation bound ([`linear`]),
//! - a ladder of semidefinite relaxations solved by a first-order splitting
//!   method with a certified dual repair ([`sdp`]),
//!
//! and schedules them per input with early exit ([`cascade`]). An exact
//! activation-pattern oracle and a PGD attack ([`oracle`]) bracket every
//! verifier from both sides, and [`harness`] generates desk-scale benchmarks
//! and renders reports.

pub mod bounds;
pub mod cascade;
pub mod error;
pub mod harness;
pub mod linear;
pub mod model;
pub mod oracle;
pub mod sdp;

pub use bounds::{preactivation_bounds, stability_partition, LayerBounds, StabilityPartition};
pub use cascade::{crv_verify, CascadeConfig, CascadeRun, StageSpec, Submethod};
pub use error::{CrvError, Result};
pub use harness::{emit_report, generate_benchmark, CascadeReport, GenConfig};
pub use linear::{lp_bound, BoundResult, RelaxationChoice};
pub use model::{forward, margin_query, predicted_label, Dataset, InputRegion, MarginObjective, Network};
pub use oracle::{exact_margin, pgd_attack, AttackConfig};
pub use sdp::{sdp_bound, SolverConfig, SubmethodLadder};
