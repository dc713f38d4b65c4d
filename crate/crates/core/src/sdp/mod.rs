//! Semidefinite relaxations of the worst-case margin problem.
//!
//! [`engine`] is a small first-order solver for `max <C, P> s.t. linear rows,
//! P >= 0, tr(P) <= tau` that always returns a certified upper bound.
//! [`verifier`] assembles the moment-matrix relaxation over
//! `v = [1, x, z]` from named constraint blocks and defines the ladder of
//! nested submethods.

pub mod engine;
pub mod verifier;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CrvError;

pub use engine::{
    dual_repair, project_psd, solve_sdp_decide, solve_sdp_max, CertifiedBound, Constraint, DualEstimate, EarlyStop,
    SdpProblem, SolveStatus, SolverConfig,
};
pub use verifier::{assemble_sdp, prune_constraints, sdp_bound, sdp_decide, SubmethodLadder};

/// Named groups of rows in the lifted problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintBlock {
    /// `P[1,1] = 1` together with `P >= 0` and the trace cap.
    #[serde(rename = "NORM")]
    Norm,
    /// `(x - l)(x - u) <= 0` lifted per input coordinate.
    #[serde(rename = "INPUT_QC")]
    InputQc,
    /// `z (z - W1 x - b1) = 0` lifted per hidden unit.
    #[serde(rename = "RELU_EQ")]
    ReluEq,
    /// `z >= 0`.
    #[serde(rename = "Z_NONNEG")]
    ZNonneg,
    /// `z >= W1 x + b1`.
    #[serde(rename = "Z_GE_AFFINE")]
    ZGeAffine,
}

impl ConstraintBlock {
    pub const ALL: [ConstraintBlock; 5] = [
        ConstraintBlock::Norm,
        ConstraintBlock::InputQc,
        ConstraintBlock::ReluEq,
        ConstraintBlock::ZNonneg,
        ConstraintBlock::ZGeAffine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintBlock::Norm => "NORM",
            ConstraintBlock::InputQc => "INPUT_QC",
            ConstraintBlock::ReluEq => "RELU_EQ",
            ConstraintBlock::ZNonneg => "Z_NONNEG",
            ConstraintBlock::ZGeAffine => "Z_GE_AFFINE",
        }
    }
}

impl fmt::Display for ConstraintBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstraintBlock {
    type Err = CrvError;

    fn from_str(s: &str) -> Result<Self, CrvError> {
        ConstraintBlock::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| CrvError::Config(format!("unknown constraint block `{s}`")))
    }
}

/// Provenance of a row, used by pruning to find a neuron's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTag {
    Block(ConstraintBlock, usize),
    Other,
}

/// Sparse symmetric matrix stored as upper-triangle entries `(i, j, v)`,
/// `i <= j`, with `<A, P> = sum v * P[i, j]` for symmetric `P`.
///
/// An off-diagonal entry `v` therefore stands for `A[i, j] = A[j, i] = v / 2`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseSym {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn new() -> Self {
        SparseSym::default()
    }

    /// Adds `v * P[i, j]` to the functional (indices in either order).
    pub fn push(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        if v != 0.0 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            if let Some(e) = self.entries.iter_mut().find(|e| e.0 == a && e.1 == b) {
                e.2 += v;
            } else {
                self.entries.push((a, b, v));
            }
        }
        self
    }

    pub fn dot(&self, p: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(i, j, v)| v * p[(i, j)]).sum()
    }

    /// `target += scale * A`.
    pub fn add_to(&self, target: &mut DMatrix<f64>, scale: f64) {
        for &(i, j, v) in &self.entries {
            if i == j {
                target[(i, i)] += scale * v;
            } else {
                let h = 0.5 * scale * v;
                target[(i, j)] += h;
                target[(j, i)] += h;
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        self.add_to(&mut m, 1.0);
        m
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        SparseSym {
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, v * s)).collect(),
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.1).max()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
