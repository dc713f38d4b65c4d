//! Ground truth and empirical lower bounds for the worst-case margin.

pub mod attack;
pub mod exact;
pub mod simplex;

pub use attack::{pgd_attack, AttackConfig, AttackResult};
pub use exact::{exact_margin, ExactResult, MAX_ENUMERATED_NEURONS};
pub use simplex::{simplex_solve, Halfspace, LinearProgram, LpOutcome, Sense};
