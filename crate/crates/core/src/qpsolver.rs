//! Dense primal active-set solver for small convex QPs and LPs.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  A_eq x = b_eq
//!             A_in x ≤ b_in
//!             lb ≤ x ≤ ub
//! ```
//!
//! with `P` symmetric positive semidefinite. Semidefinite Hessians (and `P = 0`)
//! are handled with a null-space step: on each working set the reduced Hessian
//! is eigendecomposed, and zero-curvature descent directions are followed as
//! rays until a constraint blocks them. A ray that is never blocked proves the
//! problem unbounded. Feasibility is established first with an auxiliary LP.
//!
//! Multipliers follow the convention
//! `P x + q + A_eqᵀ λ_eq + A_inᵀ λ_in − λ_lb + λ_ub = 0`, with
//! `λ_in, λ_lb, λ_ub ≥ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Primal feasibility tolerance (relative to `1 + ‖b‖∞`).
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Stationarity tolerance on the KKT residual.
pub const STATIONARITY_TOL: f64 = 1e-7;
/// Multipliers above `-DUAL_TOL` are accepted as non-negative.
pub const DUAL_TOL: f64 = 1e-9;

const CURVATURE_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;
const RAY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not positive semidefinite")]
    NotPsd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Lower bounds; `f64::NEG_INFINITY` for free.
    pub lb: DVector<f64>,
    /// Upper bounds; `f64::INFINITY` for free.
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with zero cost in `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_in(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest constraint violation at `x` (equalities, inequalities and bounds).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.num_eq() > 0 {
            let r = &self.a_eq * x - &self.b_eq;
            worst = worst.max(r.amax());
        }
        if self.num_in() > 0 {
            let r = &self.a_in * x - &self.b_in;
            worst = worst.max(r.max().max(0.0));
        }
        for j in 0..x.len() {
            worst = worst.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        worst
    }

    fn rhs_scale(&self) -> f64 {
        let mut s = 1.0f64;
        for v in self.b_eq.iter().chain(self.b_in.iter()) {
            s = s.max(v.abs());
        }
        for v in self.lb.iter().chain(self.ub.iter()) {
            if v.is_finite() {
                s = s.max(v.abs());
            }
        }
        s
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dims_ok = self.p.nrows() == n
            && self.p.ncols() == n
            && self.a_eq.ncols() == n
            && self.a_in.ncols() == n
            && self.b_eq.len() == self.a_eq.nrows()
            && self.b_in.len() == self.a_in.nrows()
            && self.lb.len() == n
            && self.ub.len() == n;
        if !dims_ok {
            return Err(QpError::DimensionMismatch(format!(
                "n={n}, P {}x{}, A_eq {}x{} (b {}), A_in {}x{} (b {}), lb {}, ub {}",
                self.p.nrows(),
                self.p.ncols(),
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len(),
                self.a_in.nrows(),
                self.a_in.ncols(),
                self.b_in.len(),
                self.lb.len(),
                self.ub.len()
            )));
        }
        let scale = self.p.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > 1e-12 * scale {
                    return Err(QpError::NotPsd);
                }
            }
        }
        if n > 0 && self.p.amax() > 0.0 {
            let shifted = &self.p + DMatrix::identity(n, n) * (1e-12 * scale);
            if shifted.cholesky().is_none() {
                return Err(QpError::NotPsd);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub dual_eq: DVector<f64>,
    pub dual_in: DVector<f64>,
    pub dual_lb: DVector<f64>,
    pub dual_ub: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// `‖P x + q + A_eqᵀ λ_eq + A_inᵀ λ_in − λ_lb + λ_ub‖∞`.
    pub fn stationarity_residual(&self, prob: &QpProblem) -> f64 {
        let r = &prob.p * &self.x + &prob.q + prob.a_eq.tr_mul(&self.dual_eq) + prob.a_in.tr_mul(&self.dual_in)
            - &self.dual_lb
            + &self.dual_ub;
        r.amax()
    }

    /// Value of the Lagrange dual function at the returned multipliers, valid
    /// when `P` is zero or the dual stationarity holds (weak duality check).
    pub fn dual_objective(&self, prob: &QpProblem) -> f64 {
        let mut v =
            -0.5 * self.x.dot(&(&prob.p * &self.x)) - prob.b_eq.dot(&self.dual_eq) - prob.b_in.dot(&self.dual_in);
        for j in 0..self.x.len() {
            if self.dual_lb[j] != 0.0 {
                v += self.dual_lb[j] * prob.lb[j];
            }
            if self.dual_ub[j] != 0.0 {
                v -= self.dual_ub[j] * prob.ub[j];
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Blocker {
    Row(usize),
    Bound(usize, Side),
}

enum Outcome {
    Optimal,
    Unbounded,
    MaxIter,
}

/// Active-set QP solver. Holds per-solve scratch state, so a single instance
/// must not be shared between threads; create one per worker.
#[derive(Debug, Default)]
pub struct ActiveSetSolver {
    working_rows: Vec<usize>,
    fixed: Vec<Option<Side>>,
    row_mult: Vec<f64>,
    bound_mult: Vec<f64>,
    iterations: usize,
}

impl ActiveSetSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, prob: &QpProblem) -> Result<QpSolution, QpError> {
        prob.validate()?;
        let n = prob.num_vars();
        let meq = prob.num_eq();
        let min = prob.num_in();
        self.iterations = 0;

        for j in 0..n {
            if prob.lb[j] > prob.ub[j] {
                return Ok(self.infeasible(prob));
            }
        }

        let x0 = self.find_feasible_point(prob)?;
        let Some(mut x) = x0 else {
            return Ok(self.infeasible(prob));
        };

        // Initial working set: independent equality rows and every variable
        // sitting on a bound.
        self.fixed = vec![None; n];
        for j in 0..n {
            if prob.lb[j] == prob.ub[j] {
                self.fixed[j] = Some(Side::Pinned);
                x[j] = prob.lb[j];
            } else if x[j] <= prob.lb[j] {
                self.fixed[j] = Some(Side::Lower);
                x[j] = prob.lb[j];
            } else if x[j] >= prob.ub[j] {
                self.fixed[j] = Some(Side::Upper);
                x[j] = prob.ub[j];
            }
        }
        let rows = stack_rows(&prob.a_eq, &prob.a_in);
        let rhs = stack_vec(&prob.b_eq, &prob.b_in);
        self.working_rows.clear();
        self.seed_equalities(&rows, meq);

        let max_iter = 50 * (n + meq + min).max(1) + 100;
        let outcome = self.run(&prob.p, &prob.q, &rows, &rhs, meq, &prob.lb, &prob.ub, &mut x, max_iter);

        let status = match outcome {
            Outcome::Optimal => QpStatus::Optimal,
            Outcome::Unbounded => QpStatus::Unbounded,
            Outcome::MaxIter => QpStatus::MaxIter,
        };
        let mut dual_eq = DVector::zeros(meq);
        let mut dual_in = DVector::zeros(min);
        let mut dual_lb = DVector::zeros(n);
        let mut dual_ub = DVector::zeros(n);
        if status == QpStatus::Optimal {
            for (slot, &r) in self.working_rows.iter().enumerate() {
                let m = self.row_mult[slot];
                if r < meq {
                    dual_eq[r] = m;
                } else {
                    dual_in[r - meq] = m.max(0.0);
                }
            }
            for j in 0..n {
                let m = self.bound_mult[j];
                match self.fixed[j] {
                    Some(Side::Lower) => dual_lb[j] = m.max(0.0),
                    Some(Side::Upper) => dual_ub[j] = m.max(0.0),
                    Some(Side::Pinned) => {
                        if m >= 0.0 {
                            dual_ub[j] = m;
                        } else {
                            dual_lb[j] = -m;
                        }
                    }
                    None => {}
                }
            }
        }
        let objective = prob.objective(&x);
        Ok(QpSolution { x, dual_eq, dual_in, dual_lb, dual_ub, status, objective, iterations: self.iterations })
    }

    fn infeasible(&self, prob: &QpProblem) -> QpSolution {
        let n = prob.num_vars();
        QpSolution {
            x: DVector::zeros(n),
            dual_eq: DVector::zeros(prob.num_eq()),
            dual_in: DVector::zeros(prob.num_in()),
            dual_lb: DVector::zeros(n),
            dual_ub: DVector::zeros(n),
            status: QpStatus::Infeasible,
            objective: f64::NAN,
            iterations: self.iterations,
        }
    }

    fn seed_equalities(&mut self, rows: &DMatrix<f64>, meq: usize) {
        let free: Vec<usize> = (0..rows.ncols()).filter(|&j| self.fixed[j].is_none()).collect();
        for r in 0..meq {
            if self.working_rows.contains(&r) {
                continue;
            }
            let mut candidate = self.working_rows.clone();
            candidate.push(r);
            let m = restrict(rows, &candidate, &free);
            if full_row_rank(&m) {
                self.working_rows.push(r);
            }
        }
    }

    /// Phase one: minimize the total infeasibility with an auxiliary LP whose
    /// starting point is feasible by construction. Returns `None` when the
    /// constraints cannot be satisfied.
    fn find_feasible_point(&mut self, prob: &QpProblem) -> Result<Option<DVector<f64>>, QpError> {
        let n = prob.num_vars();
        let meq = prob.num_eq();
        let min = prob.num_in();
        let mut x0 = DVector::zeros(n);
        for j in 0..n {
            x0[j] = 0.0f64.max(prob.lb[j]).min(prob.ub[j]);
        }
        let tol = FEASIBILITY_TOL * prob.rhs_scale();
        if prob.max_violation(&x0) <= 0.01 * tol {
            return Ok(Some(x0));
        }

        // Variables: [x (n), t, a_plus (meq), a_minus (meq)].
        let nn = n + 1 + 2 * meq;
        let t_idx = n;
        let mut rows = DMatrix::zeros(meq + min, nn);
        let mut rhs = DVector::zeros(meq + min);
        for r in 0..meq {
            for j in 0..n {
                rows[(r, j)] = prob.a_eq[(r, j)];
            }
            rows[(r, n + 1 + r)] = 1.0;
            rows[(r, n + 1 + meq + r)] = -1.0;
            rhs[r] = prob.b_eq[r];
        }
        for r in 0..min {
            for j in 0..n {
                rows[(meq + r, j)] = prob.a_in[(r, j)];
            }
            rows[(meq + r, t_idx)] = -1.0;
            rhs[meq + r] = prob.b_in[r];
        }
        let mut lb = DVector::from_element(nn, 0.0);
        let mut ub = DVector::from_element(nn, f64::INFINITY);
        for j in 0..n {
            lb[j] = prob.lb[j];
            ub[j] = prob.ub[j];
        }
        let mut cost = DVector::zeros(nn);
        for j in n..nn {
            cost[j] = 1.0;
        }

        let mut z = DVector::zeros(nn);
        for j in 0..n {
            z[j] = x0[j];
        }
        let eq_res = &prob.a_eq * &x0 - &prob.b_eq;
        for r in 0..meq {
            if eq_res[r] < 0.0 {
                z[n + 1 + r] = -eq_res[r];
            } else {
                z[n + 1 + meq + r] = eq_res[r];
            }
        }
        if min > 0 {
            let in_res = &prob.a_in * &x0 - &prob.b_in;
            z[t_idx] = in_res.max().max(0.0);
        }

        self.fixed = vec![None; nn];
        for j in 0..nn {
            if lb[j] == ub[j] {
                self.fixed[j] = Some(Side::Pinned);
            } else if z[j] <= lb[j] {
                self.fixed[j] = Some(Side::Lower);
                z[j] = lb[j];
            } else if z[j] >= ub[j] {
                self.fixed[j] = Some(Side::Upper);
                z[j] = ub[j];
            }
        }
        self.working_rows.clear();
        self.seed_equalities(&rows, meq);

        let p = DMatrix::zeros(nn, nn);
        let max_iter = 50 * (nn + meq + min) + 100;
        let outcome = self.run(&p, &cost, &rows, &rhs, meq, &lb, &ub, &mut z, max_iter);
        if matches!(outcome, Outcome::MaxIter) {
            return Ok(None);
        }
        let x = z.rows(0, n).into_owned();
        if prob.max_violation(&x) <= tol {
            Ok(Some(x))
        } else {
            Ok(None)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        rows: &DMatrix<f64>,
        rhs: &DVector<f64>,
        meq: usize,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
        x: &mut DVector<f64>,
        max_iter: usize,
    ) -> Outcome {
        let n = x.len();
        let nrows = rows.nrows();
        let p_is_zero = p.amax() == 0.0;
        let row_norms: Vec<f64> = (0..nrows).map(|r| rows.row(r).norm()).collect();
        let mut degenerate_streak = 0usize;
        self.row_mult = Vec::new();
        self.bound_mult = vec![0.0; n];

        for _ in 0..max_iter {
            self.iterations += 1;
            let g = p * &*x + q;
            let free: Vec<usize> = (0..n).filter(|&j| self.fixed[j].is_none()).collect();
            let nf = free.len();
            let mw = self.working_rows.len();
            let aw = restrict(rows, &self.working_rows, &free);
            let (qmat, rmat) = householder_qr(&aw.transpose());
            let gf = DVector::from_iterator(nf, free.iter().map(|&j| g[j]));

            // Search direction in the null space of the working set.
            let nz = nf.saturating_sub(mw);
            let mut pf = DVector::zeros(nf);
            let mut is_ray = false;
            if nz > 0 {
                let z = qmat.columns(mw, nz).into_owned();
                let gz = z.tr_mul(&gf);
                let gscale = 1.0 + g.amax();
                if p_is_zero {
                    if gz.amax() > RAY_TOL * gscale {
                        pf = -(&z * gz);
                        is_ray = true;
                    }
                } else {
                    let pff = DMatrix::from_fn(nf, nf, |a, b| p[(free[a], free[b])]);
                    let h = z.tr_mul(&(&pff * &z));
                    let eig = SymmetricEigen::new(h);
                    let emax = eig.eigenvalues.amax().max(1.0);
                    let mut ray = DVector::zeros(nz);
                    let mut newton = DVector::zeros(nz);
                    for k in 0..nz {
                        let v = eig.eigenvectors.column(k);
                        let c = v.dot(&gz);
                        let lam = eig.eigenvalues[k];
                        if lam <= CURVATURE_TOL * emax {
                            ray -= v * c;
                        } else {
                            newton -= v * (c / lam);
                        }
                    }
                    if ray.norm() > RAY_TOL * gscale {
                        pf = &z * ray;
                        is_ray = true;
                    } else {
                        pf = &z * newton;
                    }
                }
            }

            let xscale = 1.0 + x.amax();
            if !is_ray && pf.amax() <= STEP_TOL * xscale {
                // Stationary on the working set: check multiplier signs.
                let mu = if mw > 0 {
                    let q1 = qmat.columns(0, mw);
                    let rhs_mu = -(q1.tr_mul(&gf));
                    solve_upper(&rmat.view((0, 0), (mw, mw)).into_owned(), &rhs_mu)
                } else {
                    DVector::zeros(0)
                };
                self.row_mult = mu.iter().copied().collect();
                let mut resid = g.clone();
                for (slot, &r) in self.working_rows.iter().enumerate() {
                    resid += rows.row(r).transpose() * mu[slot];
                }
                for j in 0..n {
                    self.bound_mult[j] = match self.fixed[j] {
                        Some(Side::Lower) => resid[j],
                        Some(Side::Upper) | Some(Side::Pinned) => -resid[j],
                        None => 0.0,
                    };
                }
                let dual_scale = 1.0 + g.amax();
                let bland = degenerate_streak > 2 * n + 10;
                let mut drop: Option<(f64, Blocker)> = None;
                for (slot, &r) in self.working_rows.iter().enumerate() {
                    if r < meq {
                        continue;
                    }
                    let m = mu[slot] / row_norms[r].max(1e-300);
                    if m < -DUAL_TOL * dual_scale {
                        let better = match drop {
                            None => true,
                            Some((best, _)) => !bland && m < best,
                        };
                        if better {
                            drop = Some((m, Blocker::Row(slot)));
                        }
                    }
                }
                for j in 0..n {
                    let side = match self.fixed[j] {
                        Some(s @ (Side::Lower | Side::Upper)) => s,
                        _ => continue,
                    };
                    let m = self.bound_mult[j];
                    if m < -DUAL_TOL * dual_scale {
                        let better = match drop {
                            None => true,
                            Some((best, _)) => !bland && m < best,
                        };
                        if better {
                            drop = Some((m, Blocker::Bound(j, side)));
                        }
                    }
                }
                match drop {
                    None => return Outcome::Optimal,
                    Some((_, Blocker::Row(slot))) => {
                        self.working_rows.remove(slot);
                    }
                    Some((_, Blocker::Bound(j, _))) => {
                        self.fixed[j] = None;
                        // An equality skipped as dependent may have become
                        // independent on the enlarged free set.
                        if self.working_rows.iter().filter(|&&r| r < meq).count() < meq {
                            self.seed_equalities(rows, meq);
                        }
                    }
                }
                continue;
            }

            let mut pfull = DVector::zeros(n);
            for (a, &j) in free.iter().enumerate() {
                pfull[j] = pf[a];
            }
            let pnorm = pfull.norm();

            // Ratio test; ties resolved by lowest index (rows before bounds).
            let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
            let mut blocker: Option<Blocker> = None;
            let in_w: Vec<bool> = {
                let mut v = vec![false; nrows];
                for &r in &self.working_rows {
                    v[r] = true;
                }
                v
            };
            let ap_all = rows * &pfull;
            for r in meq..nrows {
                if in_w[r] {
                    continue;
                }
                let ap = ap_all[r];
                if ap > 1e-13 * row_norms[r] * pnorm {
                    let slack = (rhs[r] - rows.row(r).dot(&x.transpose())).max(0.0);
                    let step = slack / ap;
                    if step < alpha {
                        alpha = step;
                        blocker = Some(Blocker::Row(r));
                    }
                }
            }
            for &j in &free {
                let pj = pfull[j];
                if pj > 1e-13 * pnorm && ub[j].is_finite() {
                    let step = ((ub[j] - x[j]) / pj).max(0.0);
                    if step < alpha {
                        alpha = step;
                        blocker = Some(Blocker::Bound(j, Side::Upper));
                    }
                } else if pj < -1e-13 * pnorm && lb[j].is_finite() {
                    let step = ((lb[j] - x[j]) / pj).max(0.0);
                    if step < alpha {
                        alpha = step;
                        blocker = Some(Blocker::Bound(j, Side::Lower));
                    }
                }
            }
            if alpha.is_infinite() {
                return Outcome::Unbounded;
            }
            if alpha * pnorm <= STEP_TOL * xscale {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            x.axpy(alpha, &pfull, 1.0);
            match blocker {
                Some(Blocker::Row(r)) => self.working_rows.push(r),
                Some(Blocker::Bound(j, side)) => {
                    self.fixed[j] = Some(side);
                    x[j] = if side == Side::Upper { ub[j] } else { lb[j] };
                }
                None => {}
            }
        }
        Outcome::MaxIter
    }
}

/// Solve a convex QP with a fresh solver instance.
pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution, QpError> {
    ActiveSetSolver::new().solve(prob)
}

/// Solve an LP (`P = 0`).
pub fn solve_lp(prob: &QpProblem) -> Result<QpSolution, QpError> {
    if prob.p.amax() != 0.0 {
        return Err(QpError::DimensionMismatch("solve_lp requires P = 0".into()));
    }
    ActiveSetSolver::new().solve(prob)
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), n);
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn restrict(rows: &DMatrix<f64>, which: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(which.len(), cols.len(), |a, b| rows[(which[a], cols[b])])
}

fn full_row_rank(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if m.nrows() > m.ncols() {
        return false;
    }
    let (_, r) = householder_qr(&m.transpose());
    let scale = m.amax().max(1e-300);
    (0..m.nrows()).all(|k| r[(k, k)].abs() > RANK_TOL * scale)
}

/// Householder QR of an `m × k` matrix returning the full `m × m` orthogonal
/// factor and the `m × k` upper-trapezoidal factor.
pub(crate) fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let k = a.ncols();
    let mut r = a.clone();
    let mut q = DMatrix::identity(m, m);
    for col in 0..k.min(m) {
        let mut v = DVector::zeros(m - col);
        for i in col..m {
            v[i - col] = r[(i, col)];
        }
        let alpha = v.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..k {
            let mut s = 0.0;
            for i in col..m {
                s += v[i - col] * r[(i, j)];
            }
            let f = 2.0 * s / vnorm2;
            for i in col..m {
                r[(i, j)] -= f * v[i - col];
            }
        }
        for i in 0..m {
            let mut s = 0.0;
            for l in col..m {
                s += q[(i, l)] * v[l - col];
            }
            let f = 2.0 * s / vnorm2;
            for l in col..m {
                q[(i, l)] -= f * v[l - col];
            }
        }
    }
    (q, r)
}

fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}
