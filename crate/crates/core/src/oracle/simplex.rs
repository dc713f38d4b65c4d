//! Dense bounded-variable primal simplex with Bland's rule.
//!
//! Sized for the per-pattern subproblems of the exact oracle: a few dozen rows,
//! at most twenty box-bounded variables.

use crate::error::{CrvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `max objective . x` over `lower <= x <= upper` and the rows.
///
/// `upper` entries may be `+inf`; `lower` must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Halfspace>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

impl LinearProgram {
    fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(CrvError::Dimension(
                "LP box bounds do not match the objective length".into(),
            ));
        }
        for (j, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || u.is_nan() || l > u {
                return Err(CrvError::InvalidQuery(format!(
                    "LP variable {j} has invalid bounds [{l}, {u}]"
                )));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(CrvError::Dimension(format!(
                    "LP row {r} has {} coefficients, expected {n}",
                    row.coeffs.len()
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(CrvError::Numeric(format!("LP row {r} is not finite")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(CrvError::Numeric("LP objective is not finite".into()));
        }
        Ok(())
    }

    /// Largest violation of the box and row constraints at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for ((xj, lo), hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - xj).max(xj - hi);
        }
        for row in &self.rows {
            let ax: f64 = row.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            worst = worst.max(match row.sense {
                Sense::Le => ax - row.rhs,
                Sense::Ge => row.rhs - ax,
                Sense::Eq => (ax - row.rhs).abs(),
            });
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    upper: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        let mut d = cost[j];
        for (r, &k) in self.basis.iter().enumerate() {
            d -= cost[k] * self.t[r][j];
        }
        d
    }

    fn run(&mut self, cost: &[f64]) -> Step {
        let cols = cost.len();
        loop {
            // Bland: lowest-index improving column.
            let mut entering = None;
            for j in 0..cols {
                let st = self.status[j];
                if st == Status::Basic || self.upper[j] <= 0.0 {
                    continue;
                }
                let d = self.reduced_cost(cost, j);
                if (st == Status::AtLower && d > COST_TOL) || (st == Status::AtUpper && d < -COST_TOL) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Step::Optimal;
            };
            let dir = if self.status[j] == Status::AtLower { 1.0 } else { -1.0 };

            let mut step = self.upper[j];
            let mut leave: Option<(usize, Status)> = None;
            for r in 0..self.t.len() {
                let alpha = self.t[r][j] * dir;
                let k = self.basis[r];
                let (ratio, goes_to) = if alpha > PIVOT_TOL {
                    (self.beta[r].max(0.0) / alpha, Status::AtLower)
                } else if alpha < -PIVOT_TOL && self.upper[k].is_finite() {
                    ((self.upper[k] - self.beta[r]).max(0.0) / -alpha, Status::AtUpper)
                } else {
                    continue;
                };
                let better = match leave {
                    None => ratio < step,
                    Some((lr, _)) => ratio < step || (ratio == step && k < self.basis[lr]),
                };
                if better {
                    step = ratio;
                    leave = Some((r, goes_to));
                }
            }
            if step.is_infinite() {
                return Step::Unbounded;
            }

            for r in 0..self.t.len() {
                self.beta[r] -= self.t[r][j] * dir * step;
            }
            match leave {
                None => {
                    self.status[j] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                }
                Some((r, goes_to)) => {
                    let entering_value = if dir > 0.0 { step } else { self.upper[j] - step };
                    let old = self.basis[r];
                    self.status[old] = goes_to;
                    self.status[j] = Status::Basic;
                    self.basis[r] = j;
                    self.beta[r] = entering_value;
                    self.pivot(r, j);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.t[r][j];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (rr, row) in self.t.iter_mut().enumerate() {
            if rr == r {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::AtLower => 0.0,
            Status::AtUpper => self.upper[j],
            Status::Basic => {
                let r = self
                    .basis
                    .iter()
                    .position(|&k| k == j)
                    .expect("basic variable has a row");
                self.beta[r]
            }
        }
    }
}

/// Two-phase solve; infeasible and unbounded problems are outcomes, not errors.
pub fn simplex_solve(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;
    let n = lp.objective.len();
    let rows = lp.rows.len();

    // Shift to x' = x - lower in [0, upper - lower]; make every rhs nonnegative.
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let mut b = Vec::with_capacity(rows);
    let mut senses = Vec::with_capacity(rows);
    for row in &lp.rows {
        let shift: f64 = row.coeffs.iter().zip(&lp.lower).map(|(c, l)| c * l).sum();
        let mut rhs = row.rhs - shift;
        let mut coeffs = row.coeffs.clone();
        let mut sense = row.sense;
        if rhs < 0.0 {
            rhs = -rhs;
            coeffs.iter_mut().for_each(|c| *c = -*c);
            sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        a.push(coeffs);
        b.push(rhs);
        senses.push(sense);
    }

    // Columns: structurals, one slack/surplus per inequality, artificials.
    let n_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = senses.iter().filter(|s| **s != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = vec![vec![0.0; cols]; rows];
    let mut basis = vec![0; rows];
    let mut upper = vec![f64::INFINITY; cols];
    for (u, (hi, lo)) in upper.iter_mut().zip(lp.upper.iter().zip(&lp.lower)) {
        *u = hi - lo;
    }
    let mut slack_col = n;
    let mut art_col = n + n_slack;
    let mut artificials = Vec::new();
    for r in 0..rows {
        t[r][..n].copy_from_slice(&a[r]);
        match senses[r] {
            Sense::Le => {
                t[r][slack_col] = 1.0;
                basis[r] = slack_col;
                slack_col += 1;
            }
            Sense::Ge => {
                t[r][slack_col] = -1.0;
                slack_col += 1;
                t[r][art_col] = 1.0;
                basis[r] = art_col;
                artificials.push(art_col);
                art_col += 1;
            }
            Sense::Eq => {
                t[r][art_col] = 1.0;
                basis[r] = art_col;
                artificials.push(art_col);
                art_col += 1;
            }
        }
    }
    let mut status = vec![Status::AtLower; cols];
    for &k in &basis {
        status[k] = Status::Basic;
    }
    let mut tab = Tableau {
        t,
        beta: b,
        basis,
        status,
        upper,
    };

    if !artificials.is_empty() {
        let mut phase1 = vec![0.0; cols];
        for &k in &artificials {
            phase1[k] = -1.0;
        }
        tab.run(&phase1);
        let infeasibility: f64 = artificials.iter().map(|&k| tab.value_of(k)).sum();
        if infeasibility > FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        for &k in &artificials {
            tab.upper[k] = 0.0;
            if tab.status[k] == Status::AtUpper {
                tab.status[k] = Status::AtLower;
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    if let Step::Unbounded = tab.run(&cost) {
        return Ok(LpOutcome::Unbounded);
    }
    let point: Vec<f64> = (0..n)
        .map(|j| (lp.lower[j] + tab.value_of(j)).clamp(lp.lower[j], lp.upper[j]))
        .collect();
    let value = lp.objective.iter().zip(&point).map(|(c, x)| c * x).sum();
    Ok(LpOutcome::Optimal { value, point })
}
