//! Exact worst-case margin by enumerating activation patterns.
//!
//! For a fixed pattern the network is affine, so the margin maximum over the
//! pattern's cell of the input box is a linear program. Stable neurons have a
//! single admissible side over the box, so only unstable neurons are branched.

use serde::{Deserialize, Serialize};

use super::simplex::{simplex_solve, Halfspace, LinearProgram, LpOutcome, Sense};
use crate::bounds::{preactivation_bounds, stability_partition};
use crate::error::{CrvError, Result};
use crate::model::{InputRegion, MarginObjective, Network};

pub const MAX_ENUMERATED_NEURONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub l_star: f64,
    pub witness: Vec<f64>,
    pub patterns_visited: u64,
    pub feasible_patterns: u64,
}

pub fn exact_margin(net: &Network, region: &InputRegion, obj: &MarginObjective) -> Result<ExactResult> {
    let (d, m) = (net.input_dim(), net.hidden_dim());
    if m > MAX_ENUMERATED_NEURONS {
        return Err(CrvError::Guard(format!(
            "exact oracle enumerates 2^m patterns; m={m} exceeds {MAX_ENUMERATED_NEURONS}"
        )));
    }
    if region.dim() != d || obj.q.len() != m {
        return Err(CrvError::Dimension(
            "exact_margin: region or objective does not match the network".into(),
        ));
    }
    let bounds = preactivation_bounds(net, region)?;
    let parts = stability_partition(&bounds);
    let unstable = &parts.unstable;
    let w1 = net.w1();
    let row = |i: usize| -> Vec<f64> { (0..d).map(|j| w1[(i, j)]).collect() };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut visited = 0u64;
    let mut feasible = 0u64;
    let k = unstable.len();
    // The first unstable neuron is the most significant bit, so ascending
    // masks walk patterns in lexicographic order; strict improvement keeps the
    // smallest pattern among ties.
    for mask in 0u64..(1u64 << k) {
        visited += 1;
        let on = |t: usize| (mask >> (k - 1 - t)) & 1 == 1;
        let mut objective = vec![0.0; d];
        let mut constant = obj.c0;
        let mut add_active = |i: usize, objective: &mut Vec<f64>| {
            for (j, c) in objective.iter_mut().enumerate() {
                *c += obj.q[i] * w1[(i, j)];
            }
            constant += obj.q[i] * net.b1()[i];
        };
        for &i in &parts.active {
            add_active(i, &mut objective);
        }
        let mut rows = Vec::with_capacity(k);
        for (t, &i) in unstable.iter().enumerate() {
            let sense = if on(t) {
                add_active(i, &mut objective);
                Sense::Ge
            } else {
                Sense::Le
            };
            rows.push(Halfspace {
                coeffs: row(i),
                sense,
                rhs: -net.b1()[i],
            });
        }
        let lp = LinearProgram {
            objective,
            lower: region.lower().to_vec(),
            upper: region.upper().to_vec(),
            rows,
        };
        match simplex_solve(&lp)? {
            LpOutcome::Optimal { value, point } => {
                feasible += 1;
                let value = value + constant;
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, point));
                }
            }
            LpOutcome::Infeasible => {}
            LpOutcome::Unbounded => return Err(CrvError::Numeric("pattern LP over a box reported unbounded".into())),
        }
    }
    let (l_star, witness) =
        best.ok_or_else(|| CrvError::Numeric("no feasible activation pattern; the center's pattern should be".into()))?;
    Ok(ExactResult {
        l_star,
        witness,
        patterns_visited: visited,
        feasible_patterns: feasible,
    })
}
