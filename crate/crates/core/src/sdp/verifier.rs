//! Moment-matrix relaxation of the margin problem and its submethod ladder.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::engine::{solve_sdp_decide, BlockLayout, Constraint, EarlyStop, SdpProblem, SolveStatus, SolverConfig};
use super::{ConstraintBlock, RowTag, SparseSym};
use crate::bounds::{stability_partition, LayerBounds, StabilityPartition};
use crate::error::{CrvError, Result};
use crate::linear::BoundResult;
use crate::model::{InputRegion, MarginObjective, Network};

/// Nested block sets, loosest first. Levels are 1-based in identifiers
/// (`sdp:1` is `levels[0]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<ConstraintBlock>>", into = "Vec<Vec<ConstraintBlock>>")]
pub struct SubmethodLadder {
    levels: Vec<BTreeSet<ConstraintBlock>>,
}

impl Default for SubmethodLadder {
    fn default() -> Self {
        use ConstraintBlock::*;
        SubmethodLadder::new(vec![
            vec![Norm, InputQc, ReluEq],
            vec![Norm, InputQc, ReluEq, ZNonneg],
            vec![Norm, InputQc, ReluEq, ZNonneg, ZGeAffine],
        ])
        .expect("default ladder is nested")
    }
}

impl SubmethodLadder {
    /// Validates strict nesting, `NORM` everywhere, and a full final level.
    pub fn new(levels: Vec<Vec<ConstraintBlock>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(CrvError::Config("ladder needs at least one level".into()));
        }
        let sets: Vec<BTreeSet<ConstraintBlock>> = levels.into_iter().map(|l| l.into_iter().collect()).collect();
        for (k, set) in sets.iter().enumerate() {
            if !set.contains(&ConstraintBlock::Norm) {
                return Err(CrvError::Config(format!("ladder level {} lacks NORM", k + 1)));
            }
            if k > 0 && !(sets[k - 1].is_subset(set) && sets[k - 1].len() < set.len()) {
                return Err(CrvError::Config(format!(
                    "ladder level {} is not a strict superset of level {k}",
                    k + 1
                )));
            }
        }
        if sets.last().map(BTreeSet::len) != Some(ConstraintBlock::ALL.len()) {
            return Err(CrvError::Config(
                "the last ladder level must contain every block".into(),
            ));
        }
        Ok(SubmethodLadder { levels: sets })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Blocks of a 1-based level.
    pub fn blocks(&self, level: usize) -> Result<&BTreeSet<ConstraintBlock>> {
        level
            .checked_sub(1)
            .and_then(|k| self.levels.get(k))
            .ok_or_else(|| CrvError::Config(format!("ladder level {level} out of range 1..={}", self.levels.len())))
    }
}

impl TryFrom<Vec<Vec<ConstraintBlock>>> for SubmethodLadder {
    type Error = CrvError;

    fn try_from(levels: Vec<Vec<ConstraintBlock>>) -> Result<Self> {
        SubmethodLadder::new(levels)
    }
}

impl From<SubmethodLadder> for Vec<Vec<ConstraintBlock>> {
    fn from(l: SubmethodLadder) -> Self {
        l.levels.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

pub fn verifier_id(level: usize) -> String {
    format!("sdp:{level}")
}

/// The first layer seen from the scaled input `t = (x - c) / r`, with `c` and
/// `r` the midpoint and half-widths of the region, so that `t` lies in
/// `[-1, 1]^d`. Hidden units are scaled the same way, `z = s * y` with `s`
/// the positive part of the upper pre-activation bound (1 when it is not
/// positive). Thin boxes and small activations make the lifted problem badly
/// conditioned otherwise.
struct Frame {
    w: DMatrix<f64>,
    b: DVector<f64>,
    s: Vec<f64>,
}

impl Frame {
    fn new(net: &Network, region: &InputRegion, bounds: &LayerBounds) -> Self {
        let (c, r) = (region.midpoint(), region.half_widths());
        let w = DMatrix::from_fn(net.hidden_dim(), net.input_dim(), |i, j| net.w1()[(i, j)] * r[j]);
        let b = DVector::from_fn(net.hidden_dim(), |i, _| {
            net.b1()[i] + (0..net.input_dim()).map(|j| net.w1()[(i, j)] * c[j]).sum::<f64>()
        });
        Frame {
            w,
            b,
            s: unit_scales(bounds),
        }
    }
}

fn unit_scales(bounds: &LayerBounds) -> Vec<f64> {
    bounds.upper.iter().map(|&u| if u > 0.0 { u } else { 1.0 }).collect()
}

/// Every lifted execution has `t_j^2 <= 1` and `y_i^2 <= 1`.
fn trace_cap(d: usize, m: usize) -> f64 {
    (1 + d + m) as f64
}

fn relu_eq_row(f: &Frame, lay: &BlockLayout, i: usize) -> SparseSym {
    // z (z - a) = 0 divided by s: s P[y_i, y_i] - sum_j W[i, j] P[t_j, y_i] - b_i P[1, y_i] = 0
    let mut a = SparseSym::new();
    a.push(lay.z(i), lay.z(i), f.s[i]);
    for j in 0..lay.d {
        a.push(lay.x(j), lay.z(i), -f.w[(i, j)]);
    }
    a.push(lay.one(), lay.z(i), -f.b[i]);
    a
}

/// `sum_j W[i, j] P[1, t_j] - s_i P[1, y_i]`, to be compared against `-b_i`.
fn affine_gap_row(f: &Frame, lay: &BlockLayout, i: usize) -> SparseSym {
    let mut a = SparseSym::new();
    for j in 0..lay.d {
        a.push(lay.one(), lay.x(j), f.w[(i, j)]);
    }
    a.push(lay.one(), lay.z(i), -f.s[i]);
    a
}

/// A network execution at `x` as a point `[1, t, y]` of the relaxation.
pub fn lifted_execution(net: &Network, region: &InputRegion, bounds: &LayerBounds, x: &[f64]) -> Result<Vec<f64>> {
    let (c, r) = (region.midpoint(), region.half_widths());
    let t = x
        .iter()
        .zip(c.iter().zip(&r))
        .map(|(x, (c, r))| if *r > 0.0 { (x - c) / r } else { 0.0 });
    let y = net
        .preactivations(x)?
        .into_iter()
        .zip(unit_scales(bounds))
        .map(|(a, s)| a.max(0.0) / s);
    Ok(std::iter::once(1.0).chain(t).chain(y).collect())
}

/// Lifted relaxation over `v = [1, t, y]` in the scaled coordinates of
/// [`lifted_execution`].
pub fn assemble_sdp(
    net: &Network,
    region: &InputRegion,
    obj: &MarginObjective,
    bounds: &LayerBounds,
    ladder: &SubmethodLadder,
    level: usize,
) -> Result<SdpProblem> {
    let blocks = ladder.blocks(level)?;
    let (d, m) = (net.input_dim(), net.hidden_dim());
    if region.dim() != d || bounds.len() != m || obj.q.len() != m {
        return Err(CrvError::Dimension(
            "assemble_sdp: region, bounds or objective do not match the network".into(),
        ));
    }
    let lay = BlockLayout { d, m };
    let n = lay.side();
    let f = Frame::new(net, region, bounds);

    let mut objective = SparseSym::new();
    for (i, qi) in obj.q.iter().enumerate() {
        objective.push(lay.one(), lay.z(i), qi * f.s[i]);
    }

    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    let mut norm = SparseSym::new();
    norm.push(0, 0, 1.0);
    eq.push(Constraint::new(norm, 1.0, RowTag::Block(ConstraintBlock::Norm, 0)));

    if blocks.contains(&ConstraintBlock::InputQc) {
        // (t + 1)(t - 1) <= 0
        for j in 0..d {
            let mut a = SparseSym::new();
            a.push(lay.x(j), lay.x(j), 1.0);
            ineq.push(Constraint::new(a, 1.0, RowTag::Block(ConstraintBlock::InputQc, j)));
        }
    }
    if blocks.contains(&ConstraintBlock::ReluEq) {
        for i in 0..m {
            eq.push(Constraint::new(
                relu_eq_row(&f, &lay, i),
                0.0,
                RowTag::Block(ConstraintBlock::ReluEq, i),
            ));
        }
    }
    if blocks.contains(&ConstraintBlock::ZNonneg) {
        for i in 0..m {
            let mut a = SparseSym::new();
            a.push(lay.one(), lay.z(i), -1.0);
            ineq.push(Constraint::new(a, 0.0, RowTag::Block(ConstraintBlock::ZNonneg, i)));
        }
    }
    if blocks.contains(&ConstraintBlock::ZGeAffine) {
        for i in 0..m {
            ineq.push(Constraint::new(
                affine_gap_row(&f, &lay, i),
                -f.b[i],
                RowTag::Block(ConstraintBlock::ZGeAffine, i),
            ));
        }
    }

    Ok(SdpProblem {
        n,
        objective,
        offset: obj.c0,
        eq_constraints: eq,
        ineq_constraints: ineq,
        trace_cap: trace_cap(d, m),
        layout: lay,
    })
}

fn neuron_of(tag: &RowTag) -> Option<usize> {
    match tag {
        RowTag::Block(ConstraintBlock::ReluEq | ConstraintBlock::ZNonneg | ConstraintBlock::ZGeAffine, i) => Some(*i),
        _ => None,
    }
}

/// Removes stable neurons from the moment matrix.
///
/// Inactive units are dropped (`z_i = 0`); active units are substituted as
/// `z_i = W1[i] . x + b1_i` in the objective. Their own rows go with them, and
/// the remaining `z` indices are renumbered in order.
pub fn prune_constraints(
    net: &Network,
    region: &InputRegion,
    bounds: &LayerBounds,
    prob: &SdpProblem,
    parts: &StabilityPartition,
) -> Result<SdpProblem> {
    let lay = prob.layout;
    if parts.len() != lay.m
        || lay.m != net.hidden_dim()
        || lay.d != net.input_dim()
        || region.dim() != lay.d
        || bounds.len() != lay.m
    {
        return Err(CrvError::Config(format!(
            "partition of {} neurons does not match problem with m={} (network m={})",
            parts.len(),
            lay.m,
            net.hidden_dim()
        )));
    }
    let mut unstable = parts.unstable.clone();
    unstable.sort_unstable();
    let small = BlockLayout {
        d: lay.d,
        m: unstable.len(),
    };
    let mut slot = vec![None; lay.m];
    for (k, &i) in unstable.iter().enumerate() {
        slot[i] = Some(small.z(k));
    }
    let active: BTreeSet<usize> = parts.active.iter().copied().collect();
    let f = Frame::new(net, region, bounds);
    let remap = |idx: usize| -> Option<usize> {
        if idx < lay.z(0) {
            Some(idx)
        } else {
            slot[idx - lay.z(0)]
        }
    };
    let move_row = |a: &SparseSym| -> Option<SparseSym> {
        let mut out = SparseSym::new();
        for &(i, j, v) in &a.entries {
            out.push(remap(i)?, remap(j)?, v);
        }
        Some(out)
    };
    let keep = |rows: &[Constraint]| -> Vec<Constraint> {
        rows.iter()
            .filter(|c| neuron_of(&c.tag).is_none_or(|i| slot[i].is_some()))
            .filter_map(|c| Some(Constraint::new(move_row(&c.matrix)?, c.rhs, c.tag)))
            .collect()
    };

    let mut objective = SparseSym::new();
    let mut offset = prob.offset;
    for &(i, j, v) in &prob.objective.entries {
        match (remap(i), remap(j)) {
            (Some(a), Some(b)) => {
                objective.push(a, b, v);
            }
            // Only `P[1, z_k]` terms reach here.
            _ => {
                let k = j - lay.z(0);
                if i != lay.one() || !active.contains(&k) {
                    continue;
                }
                let v = v / f.s[k];
                for c in 0..lay.d {
                    objective.push(lay.one(), small.x(c), v * f.w[(k, c)]);
                }
                offset += v * f.b[k];
            }
        }
    }

    Ok(SdpProblem {
        n: small.side(),
        objective,
        offset,
        eq_constraints: keep(&prob.eq_constraints),
        ineq_constraints: keep(&prob.ineq_constraints),
        trace_cap: trace_cap(small.d, small.m),
        layout: small,
    })
}

/// Assembles, prunes and solves one ladder level.
///
/// Solver errors yield a `+inf` bound with the reason in the diagnostics.
#[allow(clippy::too_many_arguments)]
const ASCENT_STEPS: usize = 10;
const SETTLE_TOL: f64 = 3e-3;

/// Margin and its gradient at `x`.
fn margin_and_slope(net: &Network, obj: &MarginObjective, x: &[f64]) -> Option<(f64, Vec<f64>)> {
    let a = net.preactivations(x).ok()?;
    let mut value = obj.c0;
    let mut slope = vec![0.0; x.len()];
    for (i, a) in a.iter().enumerate().filter(|(_, a)| **a > 0.0) {
        value += obj.q[i] * a;
        for (j, g) in slope.iter_mut().enumerate() {
            *g += obj.q[i] * net.w1()[(i, j)];
        }
    }
    Some((value, slope))
}

/// Moves from `x` to the box vertex its local slope points at, a few times,
/// and returns the first point with a nonnegative margin.
fn vertex_ascent(net: &Network, region: &InputRegion, obj: &MarginObjective, mut x: Vec<f64>) -> Option<Vec<f64>> {
    let (lo, hi, mid) = (region.lower(), region.upper(), region.midpoint());
    region.clip(&mut x);
    for _ in 0..=ASCENT_STEPS {
        let (value, slope) = margin_and_slope(net, obj, &x)?;
        if value >= 0.0 {
            return Some(x);
        }
        let next: Vec<f64> = slope
            .iter()
            .enumerate()
            .map(|(j, g)| match g.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => hi[j],
                Some(std::cmp::Ordering::Less) => lo[j],
                _ => mid[j],
            })
            .collect();
        if next == x {
            return None;
        }
        x = next;
    }
    None
}

pub fn sdp_bound(
    net: &Network,
    region: &InputRegion,
    obj: &MarginObjective,
    bounds: &LayerBounds,
    ladder: &SubmethodLadder,
    level: usize,
    cfg: &SolverConfig,
) -> Result<BoundResult> {
    solve_level(net, region, obj, bounds, ladder, level, cfg, false)
}

/// Like [`sdp_bound`] but only settles the sign of the margin: the solve ends
/// as soon as a checkpoint bound is negative or the iterate's input row maps
/// to a point with a nonnegative margin. The bound is still certified, just
/// not as tight.
pub fn sdp_decide(
    net: &Network,
    region: &InputRegion,
    obj: &MarginObjective,
    bounds: &LayerBounds,
    ladder: &SubmethodLadder,
    level: usize,
    cfg: &SolverConfig,
) -> Result<BoundResult> {
    solve_level(net, region, obj, bounds, ladder, level, cfg, true)
}

#[allow(clippy::too_many_arguments)]
fn solve_level(
    net: &Network,
    region: &InputRegion,
    obj: &MarginObjective,
    bounds: &LayerBounds,
    ladder: &SubmethodLadder,
    level: usize,
    cfg: &SolverConfig,
    decide: bool,
) -> Result<BoundResult> {
    let id = verifier_id(level);
    let start = Instant::now();
    let prob = assemble_sdp(net, region, obj, bounds, ladder, level)?;
    let prob = prune_constraints(net, region, bounds, &prob, &stability_partition(bounds))?;
    let cube = (prob.n as f64).powi(3);
    let (c, r) = (region.midpoint(), region.half_widths());
    let witness = |row: &[f64]| {
        let start: Vec<f64> = (0..c.len())
            .map(|j| c[j] + r[j] * row[1 + j].clamp(-1.0, 1.0))
            .collect();
        vertex_ascent(net, region, obj, start)
    };
    let rule = EarlyStop {
        below: 0.0,
        witness: &witness,
        settle: Some(SETTLE_TOL),
    };
    match solve_sdp_decide(&prob, cfg, decide.then_some(&rule)) {
        Ok(sol) => {
            let status = match sol.status {
                SolveStatus::Converged => "converged",
                SolveStatus::Unconverged => "unconverged",
                SolveStatus::Decided => "decided",
            };
            let diag = format!(
                "{status}; iters={}; pres={:.2e}; dres={:.2e}; primal={:.6}; repaired={}",
                sol.iterations, sol.primal_residual, sol.dual_residual, sol.primal_estimate, sol.repaired
            );
            let mut out = BoundResult::new(
                sol.upper_bound,
                id,
                start.elapsed().as_secs_f64(),
                sol.iterations as f64 * cube,
                diag,
            );
            out.counterexample = sol.witness;
            Ok(out)
        }
        Err(CrvError::Numeric(why)) => Ok(BoundResult::failed(id, start.elapsed().as_secs_f64(), 0.0, why)),
        Err(e) => Err(e),
    }
}
