//! Centralized multi-robot certificate built on a braking maneuver.
//!
//! Under the braking input `a = −v/T_M`, `ω = 0` every robot stops at `T_M`
//! and each relative position moves on the segment from `r_ji` to
//! `r_ji + v_ji T_M / 2`. The barrier is the squared distance between robot
//! `i` and the convex hull of robot `j` swept along that segment.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{hat, Polytope};
use crate::ncbf::{ControlDecision, DecisionStatus, PairDiagnostics, ProblemSize};
use crate::par::{self, Execution};
use crate::qpsolver::{ActiveSetSolver, QpProblem, QpStatus};

const DUAL_MISMATCH_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct RigidState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub rot: Matrix3<f64>,
}

impl RigidState {
    pub fn at_rest(r: Vector3<f64>, rot: Matrix3<f64>) -> Self {
        Self { r, v: Vector3::zeros(), rot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakingLimits {
    pub a_max: f64,
    pub w_max: f64,
    pub v_max: f64,
}

/// Common braking horizon `max v_max / min a_max`.
pub fn compute_tm(limits: &[BrakingLimits]) -> Result<f64> {
    if limits.is_empty() {
        return Err(Error::EmptyFleet);
    }
    let v = limits.iter().map(|l| l.v_max).fold(f64::NEG_INFINITY, f64::max);
    let a = limits.iter().map(|l| l.a_max).fold(f64::INFINITY, f64::min);
    Ok(v / a)
}

/// `(a, ω) = (−v / T_M, 0)`.
pub fn braking_input(state: &RigidState, tm: f64) -> (Vector3<f64>, Vector3<f64>) {
    (-state.v / tm, Vector3::zeros())
}

/// Matrices of the hull problem for an ordered pair, expressed with robot
/// `i` at the origin.
#[derive(Debug, Clone)]
pub struct HullGeometry {
    pub a_i: DMatrix<f64>,
    pub b_i: DVector<f64>,
    pub a_j: DMatrix<f64>,
    pub bbar0: DVector<f64>,
    pub bbar_t: DVector<f64>,
    pub r_ji: Vector3<f64>,
    pub v_ji: Vector3<f64>,
    pub tm: f64,
}

fn to_d(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn rot_d(r: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, r.as_slice())
}

pub fn hull_geometry(si: &RigidState, sj: &RigidState, pi: &Polytope, pj: &Polytope, tm: f64) -> HullGeometry {
    let a_i = pi.a() * rot_d(&si.rot).transpose();
    let a_j = pj.a() * rot_d(&sj.rot).transpose();
    let r_ji = sj.r - si.r;
    let v_ji = sj.v - si.v;
    let bbar0 = pj.b() + &a_j * to_d(&r_ji);
    let bbar_t = pj.b() + &a_j * to_d(&(r_ji + v_ji * (tm / 2.0)));
    HullGeometry { a_i, b_i: pi.b().clone(), a_j, bbar0, bbar_t, r_ji, v_ji, tm }
}

/// Primal hull solution with the solver's multipliers arranged as the full
/// dual `(λ1, λ2, λ3, λ4, λ5, λ6)`.
#[derive(Debug, Clone)]
pub struct HullPrimal {
    pub h: f64,
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub mu: f64,
    pub lam1: DVector<f64>,
    pub lam2: DVector<f64>,
    pub lam3: DVector<f64>,
    pub lam4: f64,
    pub lam5: f64,
    pub lam6: DVector<f64>,
}

/// Balas formulation over `(x, y, y1, y2, μ)`:
/// `min ‖x − y‖²` with `Āi x ≤ bi`, `Āj y1 ≤ b̄0 μ`, `Āj y2 ≤ b̄T (1 − μ)`,
/// `y = y1 + y2`, `0 ≤ μ ≤ 1`.
pub fn hull_distance_primal(geom: &HullGeometry) -> Result<HullPrimal> {
    let mi = geom.a_i.nrows();
    let mj = geom.a_j.nrows();
    let n = 13;
    let mut prob = QpProblem::new(n);
    for k in 0..3 {
        prob.p[(k, k)] = 2.0;
        prob.p[(3 + k, 3 + k)] = 2.0;
        prob.p[(k, 3 + k)] = -2.0;
        prob.p[(3 + k, k)] = -2.0;
    }
    prob.a_eq = DMatrix::zeros(3, n);
    for k in 0..3 {
        prob.a_eq[(k, 3 + k)] = 1.0;
        prob.a_eq[(k, 6 + k)] = -1.0;
        prob.a_eq[(k, 9 + k)] = -1.0;
    }
    prob.b_eq = DVector::zeros(3);
    prob.a_in = DMatrix::zeros(mi + 2 * mj, n);
    prob.b_in = DVector::zeros(mi + 2 * mj);
    prob.a_in.view_mut((0, 0), (mi, 3)).copy_from(&geom.a_i);
    prob.b_in.rows_mut(0, mi).copy_from(&geom.b_i);
    prob.a_in.view_mut((mi, 6), (mj, 3)).copy_from(&geom.a_j);
    prob.a_in.view_mut((mi + mj, 9), (mj, 3)).copy_from(&geom.a_j);
    for k in 0..mj {
        prob.a_in[(mi + k, 12)] = -geom.bbar0[k];
        prob.a_in[(mi + mj + k, 12)] = geom.bbar_t[k];
        prob.b_in[mi + mj + k] = geom.bbar_t[k];
    }
    prob.lb[12] = 0.0;
    prob.ub[12] = 1.0;
    let sol = ActiveSetSolver::new().solve(&prob)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::solver(sol.status, "solving the hull distance QP"));
    }
    let x = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
    let y = Vector3::new(sol.x[3], sol.x[4], sol.x[5]);
    Ok(HullPrimal {
        h: (x - y).norm_squared(),
        x,
        y,
        mu: sol.x[12],
        lam1: sol.dual_in.rows(0, mi).into_owned(),
        lam2: sol.dual_in.rows(mi, mj).into_owned(),
        lam3: sol.dual_in.rows(mi + mj, mj).into_owned(),
        lam4: sol.dual_lb[12],
        lam5: sol.dual_ub[12],
        lam6: sol.dual_eq.clone(),
    })
}

/// Value of the full dual function `−¼‖Āiᵀλ1‖² − λ1 bi − λ3 b̄T − λ5`.
pub fn full_dual_value(geom: &HullGeometry, lam1: &DVector<f64>, lam3: &DVector<f64>, lam5: f64) -> f64 {
    let w = geom.a_i.tr_mul(lam1);
    -0.25 * w.norm_squared() - lam1.dot(&geom.b_i) - lam3.dot(&geom.bbar_t) - lam5
}

#[derive(Debug, Clone)]
pub struct HullDistanceResult {
    pub h: f64,
    pub lam1: DVector<f64>,
    pub lam2: DVector<f64>,
    pub lam4: f64,
    pub lam5: f64,
    pub bbar0: DVector<f64>,
    pub bbar_t: DVector<f64>,
    pub r_ji: Vector3<f64>,
    pub v_ji: Vector3<f64>,
}

/// Reduced dual
/// `min ¼ λ1 Āi Āiᵀ λ1ᵀ + λ1 bi + λ2 b̄0 + λ5` s.t. `λ1 Āi + λ2 Āj = 0`,
/// `λ2 Āj v_ji T_M/2 + λ4 − λ5 = 0`, `λ ≥ 0`; its optimum is `−h`. The value
/// is checked against the primal and a disagreement is an error.
pub fn hull_distance_dual(geom: &HullGeometry) -> Result<HullDistanceResult> {
    let primal = hull_distance_primal(geom)?;
    let (h_dual, res) = reduced_dual(geom)?;
    if (h_dual - primal.h).abs() > DUAL_MISMATCH_TOL {
        return Err(Error::DualMismatch { primal: primal.h, dual: h_dual });
    }
    Ok(res)
}

/// Solves the reduced dual alone; returns `h` and the multipliers.
pub fn reduced_dual(geom: &HullGeometry) -> Result<(f64, HullDistanceResult)> {
    let mi = geom.a_i.nrows();
    let mj = geom.a_j.nrows();
    let n = mi + mj + 2;
    let (c4, c5) = (mi + mj, mi + mj + 1);
    let mut prob = QpProblem::new(n);
    let g = &geom.a_i * geom.a_i.transpose() * 0.5;
    prob.p.view_mut((0, 0), (mi, mi)).copy_from(&g);
    prob.q.rows_mut(0, mi).copy_from(&geom.b_i);
    prob.q.rows_mut(mi, mj).copy_from(&geom.bbar0);
    prob.q[c5] = 1.0;
    prob.a_eq = DMatrix::zeros(4, n);
    prob.a_eq.view_mut((0, 0), (3, mi)).copy_from(&geom.a_i.transpose());
    prob.a_eq.view_mut((0, mi), (3, mj)).copy_from(&geom.a_j.transpose());
    let sweep = &geom.a_j * to_d(&(geom.v_ji * (geom.tm / 2.0)));
    for k in 0..mj {
        prob.a_eq[(3, mi + k)] = sweep[k];
    }
    prob.a_eq[(3, c4)] = 1.0;
    prob.a_eq[(3, c5)] = -1.0;
    prob.b_eq = DVector::zeros(4);
    prob.lb = DVector::zeros(n);
    let sol = ActiveSetSolver::new().solve(&prob)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::solver(sol.status, "solving the reduced hull dual"));
    }
    let h = (-sol.objective).max(0.0);
    let res = HullDistanceResult {
        h,
        lam1: sol.x.rows(0, mi).into_owned(),
        lam2: sol.x.rows(mi, mj).into_owned(),
        lam4: sol.x[c4],
        lam5: sol.x[c5],
        bbar0: geom.bbar0.clone(),
        bbar_t: geom.bbar_t.clone(),
        r_ji: geom.r_ji,
        v_ji: geom.v_ji,
    };
    Ok((h, res))
}

/// Instantaneous squared distance between two robots.
pub fn rho(si: &RigidState, sj: &RigidState, pi: &Polytope, pj: &Polytope) -> Result<f64> {
    let still = |s: &RigidState| RigidState { v: Vector3::zeros(), ..s.clone() };
    let geom = hull_geometry(&still(si), &still(sj), pi, pj, 1.0);
    Ok(hull_distance_primal(&geom)?.h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralizedConfig {
    pub eps: f64,
    pub eps2: f64,
    pub m_bound: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        Self { eps: 0.05, eps2: crate::distance::EPS2_DEFAULT, m_bound: 1e3, alpha2: 1.0, alpha3: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct FleetPair {
    pub i: usize,
    pub j: usize,
    pub geom: HullGeometry,
    pub hull: HullDistanceResult,
}

/// All unordered pairs `(i, j)`, `i < j`.
pub fn pair_indices(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn fleet_pairs(states: &[RigidState], polys: &[Polytope], tm: f64, exec: Execution) -> Result<Vec<FleetPair>> {
    let idx = pair_indices(states.len());
    par::map(exec, &idx, |&(i, j)| {
        let geom = hull_geometry(&states[i], &states[j], &polys[i], &polys[j], tm);
        let hull = hull_distance_dual(&geom)?;
        Ok(FleetPair { i, j, geom, hull })
    })
    .into_iter()
    .collect()
}

/// `−A hat(e_k) Rᵀ` for `k = 0, 1, 2`: the face-matrix rate per unit
/// body-frame angular velocity.
fn rate_basis(poly: &Polytope, rot: &Matrix3<f64>) -> [DMatrix<f64>; 3] {
    let rt = rot_d(&rot.transpose());
    let e = |k: usize| {
        let mut v = Vector3::zeros();
        v[k] = 1.0;
        -(poly.a() * DMatrix::from_column_slice(3, 3, hat(&v).as_slice()) * &rt)
    };
    [e(0), e(1), e(2)]
}

#[derive(Debug, Clone)]
pub struct CentralizedQp {
    pub problem: QpProblem,
    pub pair_offsets: Vec<usize>,
    pub size: ProblemSize,
    /// Per pair `(c_λ, c_u, c0)` such that `L̇ = c_λ·λ̇ + c_u·u + c0`.
    ldot: Vec<(DVector<f64>, DVector<f64>, f64)>,
}

/// Assembles the centralized QP over `u = (a_1, ω_1, …, a_N, ω_N)` and the
/// per-pair multiplier rates `(λ̇1, λ̇2, λ̇4, λ̇5)`.
pub fn build_centralized_qp(
    states: &[RigidState],
    polys: &[Polytope],
    pairs: &[FleetPair],
    nominal: &DVector<f64>,
    limits: &[BrakingLimits],
    cfg: &CentralizedConfig,
) -> Result<CentralizedQp> {
    let nr = states.len();
    let nu = 6 * nr;
    if polys.len() != nr || limits.len() != nr || nominal.len() != nu {
        return Err(Error::DimensionMismatch("fleet sizes disagree".into()));
    }
    let mut offsets = Vec::with_capacity(pairs.len());
    let mut n = nu;
    for p in pairs {
        offsets.push(n);
        n += polys[p.i].num_faces() + polys[p.j].num_faces() + 2;
    }
    let n_eq = 4 * pairs.len();
    let n_in = pairs.len() + nr;
    let mut prob = QpProblem::new(n);
    prob.a_eq = DMatrix::zeros(n_eq, n);
    prob.b_eq = DVector::zeros(n_eq);
    prob.a_in = DMatrix::zeros(n_in, n);
    prob.b_in = DVector::zeros(n_in);
    for k in 0..nu {
        prob.p[(k, k)] = 2.0;
        prob.q[k] = -2.0 * nominal[k];
    }
    let bases: Vec<[DMatrix<f64>; 3]> = (0..nr).map(|k| rate_basis(&polys[k], &states[k].rot)).collect();
    let mut size = ProblemSize { variables: nu, ..Default::default() };
    let mut ldot = Vec::with_capacity(pairs.len());

    for (pk, fp) in pairs.iter().enumerate() {
        let (i, j) = (fp.i, fp.j);
        let off = offsets[pk];
        let g = &fp.geom;
        let hr = &fp.hull;
        let mi = g.a_i.nrows();
        let mj = g.a_j.nrows();
        let (c4, c5) = (off + mi + mj, off + mi + mj + 1);
        let (ai, wi, aj, wj) = (6 * i, 6 * i + 3, 6 * j, 6 * j + 3);
        let half_t = g.tm / 2.0;
        let sweep = g.v_ji * half_t;
        let r_ji = to_d(&g.r_ji);

        // L̇ = c1·λ̇1 + c2·λ̇2 − λ̇5 + (input terms) + c0
        let w1 = g.a_i.tr_mul(&hr.lam1);
        let c1 = -(&g.a_i * &w1) * 0.5 - &g.b_i;
        let c2 = -&g.bbar0;
        let mut c_lam = DVector::zeros(mi + mj + 2);
        c_lam.rows_mut(0, mi).copy_from(&c1);
        c_lam.rows_mut(mi, mj).copy_from(&c2);
        c_lam[mi + mj + 1] = -1.0;
        let mut c_u = DVector::zeros(nu);
        for k in 0..3 {
            c_u[wi + k] = -0.5 * w1.dot(&bases[i][k].tr_mul(&hr.lam1));
            c_u[wj + k] = -hr.lam2.dot(&(&bases[j][k] * &r_ji));
        }
        let c0 = -hr.lam2.dot(&(&g.a_j * to_d(&g.v_ji)));

        let row = pk;
        for k in 0..nu {
            prob.a_in[(row, k)] = -c_u[k];
        }
        for k in 0..mi + mj + 2 {
            prob.a_in[(row, off + k)] = -c_lam[k];
        }
        prob.b_in[row] = cfg.alpha2 * (hr.h - cfg.eps * cfg.eps) + c0;
        ldot.push((c_lam, c_u, c0));

        // Φ: λ̇1 Āi + λ1 Ȧi + λ̇2 Āj + λ2 Ȧj = 0
        let er = 4 * pk;
        prob.a_eq.view_mut((er, off), (3, mi)).copy_from(&g.a_i.transpose());
        prob.a_eq.view_mut((er, off + mi), (3, mj)).copy_from(&g.a_j.transpose());
        for (k, (bi, bj)) in bases[i].iter().zip(&bases[j]).enumerate() {
            let ci = bi.tr_mul(&hr.lam1);
            let cj = bj.tr_mul(&hr.lam2);
            for d in 0..3 {
                prob.a_eq[(er + d, wi + k)] += ci[d];
                prob.a_eq[(er + d, wj + k)] += cj[d];
            }
        }
        // (λ̇2 Āj + λ2 Ȧj) v_ji T/2 + λ2 Āj a_ji T/2 + λ̇4 − λ̇5 = 0
        let ajs = &g.a_j * to_d(&sweep);
        for k in 0..mj {
            prob.a_eq[(er + 3, off + mi + k)] = ajs[k];
        }
        let s_d = to_d(&sweep);
        for (k, bj) in bases[j].iter().enumerate() {
            prob.a_eq[(er + 3, wj + k)] = hr.lam2.dot(&(bj * &s_d));
        }
        let l2a = g.a_j.tr_mul(&hr.lam2) * half_t;
        for d in 0..3 {
            prob.a_eq[(er + 3, aj + d)] += l2a[d];
            prob.a_eq[(er + 3, ai + d)] -= l2a[d];
        }
        prob.a_eq[(er + 3, c4)] = 1.0;
        prob.a_eq[(er + 3, c5)] = -1.0;

        let tail = [hr.lam4, hr.lam5];
        let lams = hr.lam1.iter().chain(hr.lam2.iter()).chain(tail.iter()).copied();
        let mut signs = 0;
        for (k, lam) in lams.enumerate() {
            let sign = lam < cfg.eps2;
            signs += usize::from(sign);
            prob.lb[off + k] = if sign { 0.0 } else { -cfg.m_bound };
            prob.ub[off + k] = cfg.m_bound;
        }
        size.variables += mi + mj;
        size.auxiliary += 2;
        size.equalities += 4;
        size.inequalities_max += 1 + mi + mj + 2;
        size.inequalities_built += 1 + signs;
    }

    for (k, (s, lim)) in states.iter().zip(limits).enumerate() {
        let row = pairs.len() + k;
        for d in 0..3 {
            prob.a_in[(row, 6 * k + d)] = s.v[d];
            prob.lb[6 * k + d] = -lim.a_max;
            prob.ub[6 * k + d] = lim.a_max;
            prob.lb[6 * k + 3 + d] = -lim.w_max;
            prob.ub[6 * k + 3 + d] = lim.w_max;
        }
        prob.b_in[row] = cfg.alpha3 * (lim.v_max * lim.v_max - s.v.norm_squared());
        size.inequalities_max += 7;
        size.inequalities_built += 7;
    }
    Ok(CentralizedQp { problem: prob, pair_offsets: offsets, size, ldot })
}

pub fn solve_centralized(
    states: &[RigidState],
    polys: &[Polytope],
    pairs: &[FleetPair],
    nominal: &DVector<f64>,
    limits: &[BrakingLimits],
    cfg: &CentralizedConfig,
) -> Result<ControlDecision> {
    let qp = build_centralized_qp(states, polys, pairs, nominal, limits, cfg)?;
    let nu = nominal.len();
    let eps_sq = cfg.eps * cfg.eps;
    let diag = |ld: &dyn Fn(usize) -> f64| -> Vec<PairDiagnostics> {
        pairs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let v = ld(k);
                PairDiagnostics { i: p.i, j: p.j, h: p.hull.h, ldot: v, margin: v + cfg.alpha2 * (p.hull.h - eps_sq) }
            })
            .collect()
    };
    let blank = |status, solve_ms| ControlDecision {
        u: DVector::zeros(nu),
        lamdot: Vec::new(),
        slack: 0.0,
        status,
        pairs: diag(&|_| f64::NAN),
        solve_ms,
        size: qp.size,
    };
    if pairs.iter().any(|p| p.hull.h < eps_sq - crate::ncbf::MARGIN_ROUNDOFF) {
        return Ok(blank(DecisionStatus::SafetyViolated, 0.0));
    }
    let start = Instant::now();
    let sol = ActiveSetSolver::new().solve(&qp.problem)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Ok(blank(DecisionStatus::Infeasible, solve_ms)),
        status => return Err(Error::solver(status, "solving the centralized QP")),
    }
    let u = sol.x.rows(0, nu).into_owned();
    let mut lamdot = Vec::with_capacity(pairs.len());
    for (k, p) in pairs.iter().enumerate() {
        let mi = p.geom.a_i.nrows();
        let mj = p.geom.a_j.nrows();
        let off = qp.pair_offsets[k];
        lamdot.push((sol.x.rows(off, mi).into_owned(), sol.x.rows(off + mi, mj + 2).into_owned()));
    }
    let pd = diag(&|k| {
        let (c_lam, c_u, c0) = &qp.ldot[k];
        let len = c_lam.len();
        c_lam.dot(&sol.x.rows(qp.pair_offsets[k], len)) + c_u.dot(&u) + c0
    });
    Ok(ControlDecision { u, lamdot, slack: 0.0, status: DecisionStatus::Optimal, pairs: pd, solve_ms, size: qp.size })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisorMode {
    Nominal,
    Braking,
}

/// Applies the controller output when it is usable and otherwise latches
/// the braking maneuver for `T_M` (counted in steps).
#[derive(Debug, Clone)]
pub struct Supervisor {
    tm: f64,
    latch_steps_total: usize,
    remaining: usize,
    accel: Vec<Vector3<f64>>,
    pub latch_count: usize,
}

impl Supervisor {
    pub fn new(tm: f64, dt: f64) -> Self {
        let total = (tm / dt - 1e-9).ceil().max(1.0) as usize;
        Self { tm, latch_steps_total: total, remaining: 0, accel: Vec::new(), latch_count: 0 }
    }

    pub fn mode(&self) -> SupervisorMode {
        if self.remaining > 0 {
            SupervisorMode::Braking
        } else {
            SupervisorMode::Nominal
        }
    }

    pub fn braking(&self) -> bool {
        self.remaining > 0
    }

    /// Chooses the input for this step. `decision` is consulted only when not
    /// already braking; a non-optimal decision starts a new latch.
    pub fn select(
        &mut self,
        states: &[RigidState],
        decision: Option<&ControlDecision>,
    ) -> (DVector<f64>, SupervisorMode) {
        if self.remaining == 0 {
            if let Some(d) = decision.filter(|d| d.status == DecisionStatus::Optimal) {
                return (d.u.clone(), SupervisorMode::Nominal);
            }
            self.accel = states.iter().map(|s| braking_input(s, self.tm).0).collect();
            self.remaining = self.latch_steps_total;
            self.latch_count += 1;
        }
        self.remaining -= 1;
        let mut u = DVector::zeros(6 * states.len());
        for (k, a) in self.accel.iter().enumerate() {
            u.rows_mut(6 * k, 3).copy_from(a);
        }
        (u, SupervisorMode::Braking)
    }
}
