//! First-order solver for small semidefinite programs with a certified bound.
//!
//! The solver runs an alternating-direction augmented Lagrangian method on the
//! dual of
//!
//! ```text
//! max <C, P> + offset
//! s.t. <A_k, P> = b_k,  <G_j, P> <= h_j,  tr(P) <= tau,  P >= 0
//! ```
//!
//! with inequality slacks carried as a nonnegative block next to `P`. Each
//! iteration solves one fixed linear system for the multipliers and projects
//! onto the PSD cone through a symmetric eigendecomposition. Whatever the
//! iterate quality, the returned value goes through [`dual_repair`], which
//! turns any multiplier vector into a valid upper bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{RowTag, SparseSym};
use crate::error::{CrvError, Result};

/// One linear row `<A, P> (= | <=) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub matrix: SparseSym,
    pub rhs: f64,
    pub tag: RowTag,
}

impl Constraint {
    pub fn new(matrix: SparseSym, rhs: f64, tag: RowTag) -> Self {
        Constraint { matrix, rhs, tag }
    }
}

/// Index ranges of the `1 / x / z` blocks in the moment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub d: usize,
    pub m: usize,
}

impl BlockLayout {
    pub fn one(&self) -> usize {
        0
    }

    pub fn x(&self, j: usize) -> usize {
        1 + j
    }

    pub fn z(&self, i: usize) -> usize {
        1 + self.d + i
    }

    pub fn side(&self) -> usize {
        1 + self.d + self.m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub n: usize,
    /// Maximize `<objective, P> + offset`.
    pub objective: SparseSym,
    pub offset: f64,
    pub eq_constraints: Vec<Constraint>,
    pub ineq_constraints: Vec<Constraint>,
    pub trace_cap: f64,
    pub layout: BlockLayout,
}

impl SdpProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.trace_cap.is_finite() && self.trace_cap > 0.0) {
            return Err(CrvError::Config(format!(
                "trace cap must be positive and finite, got {}",
                self.trace_cap
            )));
        }
        if self.layout.side() != self.n {
            return Err(CrvError::Config(format!(
                "layout side {} does not match n={}",
                self.layout.side(),
                self.n
            )));
        }
        let has_norm = self
            .eq_constraints
            .iter()
            .any(|c| c.matrix.entries.len() == 1 && c.matrix.entries[0] == (0, 0, 1.0) && c.rhs == 1.0);
        if !has_norm {
            return Err(CrvError::Config(
                "problem lacks the normalization row P[1,1] = 1".into(),
            ));
        }
        let rows = self.eq_constraints.iter().chain(&self.ineq_constraints);
        for c in rows {
            if c.matrix.max_index().is_some_and(|k| k >= self.n) {
                return Err(CrvError::Config("constraint references an entry outside P".into()));
            }
            if !c.rhs.is_finite() || c.matrix.entries.iter().any(|e| !e.2.is_finite()) {
                return Err(CrvError::Numeric("constraint data is not finite".into()));
            }
        }
        if self.objective.max_index().is_some_and(|k| k >= self.n) {
            return Err(CrvError::Config("objective references an entry outside P".into()));
        }
        Ok(())
    }

    /// Objective value `<C, P> + offset` at a given matrix.
    pub fn objective_at(&self, p: &DMatrix<f64>) -> f64 {
        self.objective.dot(p) + self.offset
    }

    /// Largest violation of any row, the PSD condition and the trace cap.
    pub fn max_violation(&self, p: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.eq_constraints {
            worst = worst.max((c.matrix.dot(p) - c.rhs).abs());
        }
        for c in &self.ineq_constraints {
            worst = worst.max(c.matrix.dot(p) - c.rhs);
        }
        worst = worst.max(p.trace() - self.trace_cap);
        worst.max(-min_eigenvalue(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once both relative residuals fall below this.
    pub tol: f64,
    /// Initial penalty parameter.
    pub mu: f64,
    /// Residual-balancing period for the penalty parameter; 0 disables it.
    pub adapt_every: usize,
    /// Relaxation factor for the primal update, in (0, 1.618).
    pub step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 20_000,
            tol: 1e-6,
            mu: 0.5,
            adapt_every: 100,
            step: 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Unconverged,
    /// Stopped by an [`EarlyStop`] rule.
    Decided,
}

/// Stops the iteration once the sign of the optimum is settled: either a
/// checkpoint bound falls below `below`, or `witness`, seeded with the first
/// row of the current iterate, returns a point known to reach it.
///
/// With `settle = Some(tol)` the solve also gives up once the iterate is
/// within `tol` of feasible and its objective clears `below` by `tol`. That
/// only says the bound will not drop below `below`, so it never certifies.
pub struct EarlyStop<'a> {
    pub below: f64,
    pub witness: &'a dyn Fn(&[f64]) -> Option<Vec<f64>>,
    pub settle: Option<f64>,
}

/// Multipliers in the units of the original rows; inequality entries are
/// clamped to be nonnegative by [`dual_repair`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualEstimate {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    /// Guaranteed to dominate the optimum of the problem.
    pub upper_bound: f64,
    /// Objective at the last primal iterate; carries no guarantee.
    pub primal_estimate: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Whether the eigenvalue-shift correction was nonzero.
    pub repaired: bool,
    pub status: SolveStatus,
    /// The point returned by an [`EarlyStop`] witness, if it stopped the solve.
    pub witness: Option<Vec<f64>>,
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Frobenius-nearest PSD matrix.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let w = lam.max(0.0);
        scaled.column_mut(k).scale_mut(w);
    }
    let mut out = scaled * q.transpose();
    symmetrize(&mut out);
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lagrangian upper bound for arbitrary multipliers.
///
/// With `S = sum y_k A_k + sum lam_j G_j + lam_tr I - C`, every feasible `P`
/// satisfies `<C, P> <= y.b + lam.h + lam_tr tau - <S, P>` and
/// `-<S, P> <= tau * max(0, -lambda_min(S))`.
pub fn dual_repair(prob: &SdpProblem, dual: &DualEstimate) -> f64 {
    let n = prob.n;
    let mut s = DMatrix::zeros(n, n);
    let mut value = prob.offset;
    for (c, y) in prob.eq_constraints.iter().zip(&dual.eq) {
        c.matrix.add_to(&mut s, *y);
        value += y * c.rhs;
    }
    for (c, lam) in prob.ineq_constraints.iter().zip(&dual.ineq) {
        let lam = lam.max(0.0);
        c.matrix.add_to(&mut s, lam);
        value += lam * c.rhs;
    }
    let lam_tr = dual.trace.max(0.0);
    for i in 0..n {
        s[(i, i)] += lam_tr;
    }
    value += lam_tr * prob.trace_cap;
    prob.objective.add_to(&mut s, -1.0);
    let shortfall = (-min_eigenvalue(&s)).max(0.0);
    value + prob.trace_cap * shortfall
}

/// Scaled copy of the problem in minimization form, as seen by the iteration.
struct Scaled {
    n: usize,
    /// Rows: equalities first, then inequalities (trace cap last).
    rows: Vec<SparseSym>,
    rhs: DVector<f64>,
    row_scale: Vec<f64>,
    n_eq: usize,
    /// `-C / obj_scale`.
    cost: DMatrix<f64>,
    obj_scale: f64,
}

impl Scaled {
    fn new(prob: &SdpProblem) -> Self {
        let n = prob.n;
        let mut trace = SparseSym::new();
        for i in 0..n {
            trace.push(i, i, 1.0);
        }
        let raw: Vec<(&SparseSym, f64)> = prob
            .eq_constraints
            .iter()
            .chain(&prob.ineq_constraints)
            .map(|c| (&c.matrix, c.rhs))
            .chain(std::iter::once((&trace, prob.trace_cap)))
            .collect();
        let mut rows = Vec::with_capacity(raw.len());
        let mut rhs = DVector::zeros(raw.len());
        let mut row_scale = Vec::with_capacity(raw.len());
        for (k, (a, b)) in raw.into_iter().enumerate() {
            let norm = a.to_dense(n).norm();
            let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            rows.push(a.scaled(s));
            rhs[k] = b * s;
            row_scale.push(s);
        }
        let c = prob.objective.to_dense(n);
        let cn = c.norm();
        let obj_scale = if cn > 0.0 { cn } else { 1.0 };
        Scaled {
            n,
            rows,
            rhs,
            row_scale,
            n_eq: prob.eq_constraints.len(),
            cost: -c / obj_scale,
            obj_scale,
        }
    }

    /// Maps scaled minimization multipliers back to the original max form.
    fn dual(&self, prob: &SdpProblem, y: &DVector<f64>) -> DualEstimate {
        let to_orig = |k: usize| -self.obj_scale * y[k] * self.row_scale[k];
        let n_ineq = prob.ineq_constraints.len();
        DualEstimate {
            eq: (0..self.n_eq).map(to_orig).collect(),
            ineq: (0..n_ineq).map(|j| to_orig(self.n_eq + j)).collect(),
            trace: to_orig(self.n_eq + n_ineq),
        }
    }

    fn is_ineq(&self, k: usize) -> bool {
        k >= self.n_eq
    }

    /// `A(X)` for `X = (P, slack)`.
    fn apply(&self, p: &DMatrix<f64>, slack: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |k, _| {
            let mut v = self.rows[k].dot(p);
            if self.is_ineq(k) {
                v += slack[k - self.n_eq];
            }
            v
        })
    }

    /// `A*(y)`, returned as the matrix part and the slack part.
    fn adjoint(&self, y: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (k, row) in self.rows.iter().enumerate() {
            row.add_to(&mut m, y[k]);
        }
        (m, y.iter().skip(self.n_eq).copied().collect())
    }

    fn gram(&self) -> DMatrix<f64> {
        let dense: Vec<DMatrix<f64>> = self.rows.iter().map(|r| r.to_dense(self.n)).collect();
        let k = dense.len();
        DMatrix::from_fn(k, k, |a, b| {
            let mut v = dense[a].dot(&dense[b]);
            if a == b && self.is_ineq(a) {
                v += 1.0;
            }
            v
        })
    }
}

/// Solves `M y = r` for the symmetric PSD Gram matrix, tolerating rank deficiency.
enum GramSolver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Pseudo(DMatrix<f64>),
}

impl GramSolver {
    fn new(m: DMatrix<f64>) -> Self {
        if let Some(ch) = m.clone().cholesky() {
            let diag_ok = ch.l_dirty().diagonal().iter().all(|v| *v > 1e-8);
            if diag_ok {
                return GramSolver::Cholesky(ch);
            }
        }
        let eig = SymmetricEigen::new(m);
        let cutoff = 1e-10 * eig.eigenvalues.amax().max(1.0);
        let inv: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|l| if *l > cutoff { 1.0 / l } else { 0.0 })
            .collect();
        let q = &eig.eigenvectors;
        let mut scaled = q.clone();
        for (k, w) in inv.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*w);
        }
        GramSolver::Pseudo(scaled * q.transpose())
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            GramSolver::Cholesky(ch) => ch.solve(r),
            GramSolver::Pseudo(inv) => inv * r,
        }
    }
}

/// Iterations between certified-bound checkpoints.
const REPAIR_EVERY: usize = 25;

/// Maximizes the problem and returns a certified upper bound.
pub fn solve_sdp_max(prob: &SdpProblem, cfg: &SolverConfig) -> Result<CertifiedBound> {
    solve_sdp_decide(prob, cfg, None)
}

/// [`solve_sdp_max`] with an optional early stop; the bound stays certified.
pub fn solve_sdp_decide(prob: &SdpProblem, cfg: &SolverConfig, stop: Option<&EarlyStop>) -> Result<CertifiedBound> {
    prob.validate()?;
    if !(cfg.tol > 0.0 && cfg.mu > 0.0) {
        return Err(CrvError::Config("solver tolerance and penalty must be positive".into()));
    }
    if !(cfg.step > 0.0 && cfg.step < 1.618) {
        return Err(CrvError::Config(format!(
            "relaxation step must lie in (0, 1.618), got {}",
            cfg.step
        )));
    }
    let sc = Scaled::new(prob);
    let n = sc.n;
    let n_rows = sc.rows.len();
    let n_slack = n_rows - sc.n_eq;
    let gram = GramSolver::new(sc.gram());

    let mut x = DMatrix::<f64>::zeros(n, n);
    let mut xs = vec![0.0; n_slack];
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut ss = vec![0.0; n_slack];
    let mut y = DVector::<f64>::zeros(n_rows);
    let mut mu = cfg.mu;

    let b_norm = 1.0 + sc.rhs.norm();
    let c_norm = 1.0 + sc.cost.norm();
    let mut pinf = f64::INFINITY;
    let mut dinf = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::Unconverged;
    let mut ratio_acc = 0.0;
    // Smallest certified bound seen so far, with its unrepaired value.
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut witness = None;

    while iterations < cfg.max_iters {
        iterations += 1;

        // y = (AA*)^{-1} (mu (b - A(X)) + A(C - S))
        let ax = sc.apply(&x, &xs);
        let cms = &sc.cost - &s;
        let neg_ss: Vec<f64> = ss.iter().map(|v| -v).collect();
        let acs = sc.apply(&cms, &neg_ss);
        let rhs = (&sc.rhs - ax) * mu + acs;
        y = gram.solve(&rhs);

        // V = C - A*(y) - mu X; S = proj(V); X = (S - V) / mu
        let (aty, aty_s) = sc.adjoint(&y);
        let mut v = &sc.cost - aty - &x * mu;
        symmetrize(&mut v);
        let eig = SymmetricEigen::new(v);
        let q = &eig.eigenvectors;
        let mut pos = q.clone();
        let mut neg = q.clone();
        for (k, lam) in eig.eigenvalues.iter().enumerate() {
            pos.column_mut(k).scale_mut(lam.max(0.0));
            neg.column_mut(k).scale_mut((-lam).max(0.0));
        }
        let qt = q.transpose();
        let new_s = pos * &qt;
        let new_x = (neg * &qt) * (cfg.step / mu) + &x * (1.0 - cfg.step);

        let mut dx2 = (&new_x - &x).norm_squared();
        for j in 0..n_slack {
            let vj = -aty_s[j] - mu * xs[j];
            let nx = cfg.step * (-vj).max(0.0) / mu + (1.0 - cfg.step) * xs[j];
            dx2 += (nx - xs[j]).powi(2);
            ss[j] = vj.max(0.0);
            xs[j] = nx;
        }
        x = new_x;
        s = new_s;
        symmetrize(&mut x);
        symmetrize(&mut s);

        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Err(CrvError::Numeric(format!(
                "non-finite iterate at iteration {iterations}"
            )));
        }

        pinf = (sc.apply(&x, &xs) - &sc.rhs).norm() / b_norm;
        dinf = mu * dx2.sqrt() / (cfg.step * c_norm);
        if pinf.max(dinf) < cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
        let checkpoint = iterations % REPAIR_EVERY == 0;
        if checkpoint {
            let dual = sc.dual(prob, &y);
            let ub = dual_repair(prob, &dual);
            if ub < best.0 {
                best = (ub, lagrangian_value(prob, &dual));
            }
        }
        if let Some(rule) = stop {
            if checkpoint && best.0 < rule.below {
                status = SolveStatus::Decided;
                break;
            }
            if let Some(tol) = rule.settle.filter(|tol| pinf < *tol) {
                let value = prob.objective_at(&x);
                if value - rule.below > tol * (1.0 + value.abs()) {
                    status = SolveStatus::Decided;
                    break;
                }
            }
            if checkpoint || iterations == 1 {
                let row: Vec<f64> = x.row(0).iter().copied().collect();
                if let Some(w) = (rule.witness)(&row) {
                    status = SolveStatus::Decided;
                    witness = Some(w);
                    break;
                }
            }
        }

        if cfg.adapt_every > 0 {
            ratio_acc += (pinf.max(1e-300) / dinf.max(1e-300)).ln();
            if iterations % cfg.adapt_every == 0 {
                let ratio = (ratio_acc / cfg.adapt_every as f64).exp();
                ratio_acc = 0.0;
                if ratio > 5.0 {
                    mu = (mu * 2.0).min(1e6);
                } else if ratio < 0.2 {
                    mu = (mu * 0.5).max(1e-6);
                }
            }
        }
    }

    let dual = sc.dual(prob, &y);
    let (mut upper_bound, mut plain) = (dual_repair(prob, &dual), lagrangian_value(prob, &dual));
    if best.0 < upper_bound {
        (upper_bound, plain) = best;
    }
    if upper_bound.is_nan() {
        return Err(CrvError::Numeric("dual repair produced NaN".into()));
    }

    let primal_estimate = prob.objective_at(&x);

    Ok(CertifiedBound {
        upper_bound,
        primal_estimate,
        iterations,
        primal_residual: pinf,
        dual_residual: dinf,
        repaired: upper_bound > plain,
        status,
        witness,
    })
}

fn lagrangian_value(prob: &SdpProblem, dual: &DualEstimate) -> f64 {
    let mut v = prob.offset;
    for (c, y) in prob.eq_constraints.iter().zip(&dual.eq) {
        v += y * c.rhs;
    }
    for (c, lam) in prob.ineq_constraints.iter().zip(&dual.ineq) {
        v += lam.max(0.0) * c.rhs;
    }
    v + dual.trace.max(0.0) * prob.trace_cap
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm_row() -> Constraint {
        let mut a = SparseSym::new();
        a.push(0, 0, 1.0);
        Constraint::new(a, 1.0, RowTag::Other)
    }

    fn tiny(n: usize, objective: SparseSym) -> SdpProblem {
        SdpProblem {
            n,
            objective,
            offset: 0.0,
            eq_constraints: vec![norm_row()],
            ineq_constraints: vec![],
            trace_cap: n as f64 + 1.0,
            layout: BlockLayout { d: n - 1, m: 0 },
        }
    }

    #[test]
    fn one_by_one_normalization() {
        for c in [2.5, -1.0, 0.0] {
            let mut obj = SparseSym::new();
            obj.push(0, 0, c);
            let prob = tiny(1, obj);
            let r = solve_sdp_max(&prob, &SolverConfig::default()).unwrap();
            assert!((r.upper_bound - c).abs() < 1e-6, "{c}: {r:?}");
            assert!(r.upper_bound >= c - 1e-12);
        }
    }

    #[test]
    fn repair_with_feasible_dual_is_plain_lagrangian() {
        // max P[0,0] s.t. P[0,0] = 1: y = 1 gives S = 0.
        let mut obj = SparseSym::new();
        obj.push(0, 0, 1.0);
        let prob = tiny(2, obj);
        let dual = DualEstimate {
            eq: vec![1.0],
            ineq: vec![],
            trace: 0.0,
        };
        assert_eq!(dual_repair(&prob, &dual), 1.0);
    }

    #[test]
    fn repair_shift_arithmetic() {
        // S = diag(-0.01, 0) with y = 0: shift by 0.01 * tau.
        let mut obj = SparseSym::new();
        obj.push(0, 0, 0.01);
        let mut prob = tiny(2, obj);
        prob.trace_cap = 10.0;
        let dual = DualEstimate {
            eq: vec![0.0],
            ineq: vec![],
            trace: 0.0,
        };
        assert!((dual_repair(&prob, &dual) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn psd_projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
            let psd = &b * b.transpose();
            let again = project_psd(&psd);
            assert!((again - &psd).norm() <= 1e-10);
        }
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = project_psd(&indefinite);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14 && p[(1, 1)].abs() < 1e-14);
    }

    /// Random 3x3 problems with inequality rows satisfied by a known point.
    fn random_problem(rng: &mut ChaCha8Rng) -> SdpProblem {
        let v0 = [1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let p0 = DMatrix::from_fn(3, 3, |i, j| v0[i] * v0[j]);
        let mut obj = SparseSym::new();
        for i in 0..3 {
            for j in i..3 {
                obj.push(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let mut ineq = Vec::new();
        for _ in 0..3 {
            let mut g = SparseSym::new();
            for i in 0..3 {
                for j in i..3 {
                    g.push(i, j, rng.random_range(-1.0..1.0));
                }
            }
            let h = g.dot(&p0) + rng.random_range(0.0..0.5);
            ineq.push(Constraint::new(g, h, RowTag::Other));
        }
        SdpProblem {
            n: 3,
            objective: obj,
            offset: 0.0,
            eq_constraints: vec![norm_row()],
            ineq_constraints: ineq,
            trace_cap: 4.0,
            layout: BlockLayout { d: 2, m: 0 },
        }
    }

    /// Best objective over random feasible PSD points with `P[0,0] = 1`.
    fn sampled_lower_bound(prob: &SdpProblem, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for _ in 0..samples {
            let rank = rng.random_range(1..=3);
            let mut p = DMatrix::zeros(3, 3);
            let mut weights: Vec<f64> = (0..rank).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            for w in weights {
                let v = [1.0, rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                p += DMatrix::from_fn(3, 3, |i, j| w * v[i] * v[j]);
            }
            if prob.max_violation(&p) <= 0.0 {
                best = best.max(prob.objective_at(&p));
            }
        }
        best
    }

    #[test]
    fn repaired_bound_dominates_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let prob = random_problem(&mut rng);
            let lower = sampled_lower_bound(&prob, &mut rng, 4000);
            let solved = solve_sdp_max(&prob, &SolverConfig::default()).unwrap();
            assert!(solved.upper_bound >= lower - 1e-12, "{} < {lower}", solved.upper_bound);
            // Arbitrary multipliers must still give a valid bound.
            let dual = DualEstimate {
                eq: vec![rng.random_range(-2.0..2.0)],
                ineq: (0..3).map(|_| rng.random_range(-1.0..2.0)).collect(),
                trace: rng.random_range(0.0..1.0),
            };
            assert!(dual_repair(&prob, &dual) >= lower - 1e-12);
        }
    }

    #[test]
    fn truncated_runs_stay_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = random_problem(&mut rng);
        let lower = sampled_lower_bound(&prob, &mut rng, 4000);
        for iters in [1, 2, 5, 20, 100] {
            let cfg = SolverConfig {
                max_iters: iters,
                ..SolverConfig::default()
            };
            let r = solve_sdp_max(&prob, &cfg).unwrap();
            assert!(r.upper_bound >= lower - 1e-12);
            assert!(r.upper_bound.is_finite());
        }
    }

    #[test]
    fn early_stops_keep_the_bound_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let prob = random_problem(&mut rng);
        let lower = sampled_lower_bound(&prob, &mut rng, 4000);
        let cfg = SolverConfig::default();

        let found = |_: &[f64]| Some(vec![0.5]);
        let rule = EarlyStop {
            below: f64::NEG_INFINITY,
            witness: &found,
            settle: None,
        };
        let r = solve_sdp_decide(&prob, &cfg, Some(&rule)).unwrap();
        assert_eq!((r.status, r.iterations), (SolveStatus::Decided, 1));
        assert_eq!(r.witness, Some(vec![0.5]));
        assert!(r.upper_bound >= lower - 1e-12);

        let none = |_: &[f64]| None;
        for (below, settle) in [(f64::INFINITY, None), (f64::NEG_INFINITY, Some(1e-2))] {
            let rule = EarlyStop {
                below,
                witness: &none,
                settle,
            };
            let r = solve_sdp_decide(&prob, &cfg, Some(&rule)).unwrap();
            assert!(r.upper_bound >= lower - 1e-12);
            assert!(r.witness.is_none());
        }
        let full = solve_sdp_max(&prob, &cfg).unwrap();
        let rule = EarlyStop {
            below: f64::INFINITY,
            witness: &none,
            settle: None,
        };
        let quick = solve_sdp_decide(&prob, &cfg, Some(&rule)).unwrap();
        assert!(quick.iterations <= REPAIR_EVERY.min(full.iterations));
    }
}
