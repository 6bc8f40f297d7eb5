//! Minimum squared distance between two placed polytopes and its dual.
//!
//! The primal is
//! `min ‖zi − zj‖²  s.t.  Āi zi ≤ b̄i,  Āj zj ≤ b̄j`.
//! Its Lagrangian dual maximizes
//! `L(λi, λj) = −¼ λi Āi Āiᵀ λiᵀ − λi b̄i − λj b̄j` over `λi Āi + λj Āj = 0`,
//! `λ ≥ 0`, and at the optimum `λi Āi = −2 s*ᵀ` with `s* = zi − zj`.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::PlacedHRep;
use crate::qpsolver::{ActiveSetSolver, QpProblem, QpStatus};

/// Multipliers above this are considered strictly positive.
pub const EPS2_DEFAULT: f64 = 1e-5;
/// Face residual below which a face counts as touching the witness point.
pub const ACTIVE_RESIDUAL_TOL: f64 = 1e-7;
/// Squared distances at or below this are reported as contact (`h = 0`).
pub const CONTACT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub h: f64,
    pub zi: DVector<f64>,
    pub zj: DVector<f64>,
    pub sstar: DVector<f64>,
    pub lam_i: DVector<f64>,
    pub lam_j: DVector<f64>,
    pub act_i: Vec<usize>,
    pub act_j: Vec<usize>,
}

impl DistanceResult {
    pub fn to_json(&self) -> serde_json::Value {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<f64>>();
        json!({
            "h": self.h,
            "zi": v(&self.zi),
            "zj": v(&self.zj),
            "sstar": v(&self.sstar),
            "lam_i": v(&self.lam_i),
            "lam_j": v(&self.lam_j),
            "act_i": self.act_i,
            "act_j": self.act_j,
        })
    }
}

fn check_pair(pi: &PlacedHRep, pj: &PlacedHRep) -> Result<()> {
    if pi.dim() != pj.dim() || pi.b.len() != pi.num_faces() || pj.b.len() != pj.num_faces() {
        return Err(Error::DimensionMismatch(format!(
            "pair dims {}x{} / {}x{}",
            pi.num_faces(),
            pi.dim(),
            pj.num_faces(),
            pj.dim()
        )));
    }
    Ok(())
}

fn primal_problem(pi: &PlacedHRep, pj: &PlacedHRep) -> QpProblem {
    let l = pi.dim();
    let (ri, rj) = (pi.num_faces(), pj.num_faces());
    let mut prob = QpProblem::new(2 * l);
    for k in 0..l {
        prob.p[(k, k)] = 2.0;
        prob.p[(l + k, l + k)] = 2.0;
        prob.p[(k, l + k)] = -2.0;
        prob.p[(l + k, k)] = -2.0;
    }
    let mut a_in = DMatrix::zeros(ri + rj, 2 * l);
    a_in.view_mut((0, 0), (ri, l)).copy_from(&pi.a);
    a_in.view_mut((ri, l), (rj, l)).copy_from(&pj.a);
    prob.a_in = a_in;
    prob.b_in = DVector::from_iterator(ri + rj, pi.b.iter().chain(pj.b.iter()).copied());
    prob
}

/// Primal distance QP. Returns `(h, zi, zj)`.
pub fn min_distance_primal(pi: &PlacedHRep, pj: &PlacedHRep) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let mut solver = ActiveSetSolver::new();
    let (h, zi, zj, _) = primal_with(&mut solver, pi, pj)?;
    Ok((h, zi, zj))
}

type PrimalOut = (f64, DVector<f64>, DVector<f64>, DVector<f64>);

fn primal_with(solver: &mut ActiveSetSolver, pi: &PlacedHRep, pj: &PlacedHRep) -> Result<PrimalOut> {
    check_pair(pi, pj)?;
    let l = pi.dim();
    let prob = primal_problem(pi, pj);
    let sol = solver.solve(&prob)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::solver(sol.status, "solving the distance QP"));
    }
    let zi = sol.x.rows(0, l).into_owned();
    let zj = sol.x.rows(l, l).into_owned();
    let h = (&zi - &zj).norm_squared();
    Ok((h, zi, zj, sol.dual_in))
}

/// Distance with dual multipliers, separating vector and active sets, read
/// from the multipliers of one primal solve.
pub fn min_distance_dual(pi: &PlacedHRep, pj: &PlacedHRep) -> Result<DistanceResult> {
    min_distance_dual_with(&mut ActiveSetSolver::new(), pi, pj, EPS2_DEFAULT)
}

pub fn min_distance_dual_with(
    solver: &mut ActiveSetSolver,
    pi: &PlacedHRep,
    pj: &PlacedHRep,
    eps2: f64,
) -> Result<DistanceResult> {
    let (h, zi, zj, duals) = primal_with(solver, pi, pj)?;
    let (ri, rj) = (pi.num_faces(), pj.num_faces());
    let mut lam_i = duals.rows(0, ri).into_owned();
    let mut lam_j = duals.rows(ri, rj).into_owned();
    let mut sstar = &zi - &zj;
    let mut h = h;
    if h <= CONTACT_TOL {
        h = 0.0;
        sstar.fill(0.0);
        lam_i.fill(0.0);
        lam_j.fill(0.0);
    }
    let act = |p: &PlacedHRep, z: &DVector<f64>, lam: &DVector<f64>| -> Vec<usize> {
        let resid = &p.a * z - &p.b;
        (0..p.num_faces()).filter(|&k| lam[k] > eps2 || resid[k].abs() <= ACTIVE_RESIDUAL_TOL).collect()
    };
    let act_i = act(pi, &zi, &lam_i);
    let act_j = act(pj, &zj, &lam_j);
    if h > 0.0 && (!licq(&pi.a, &lam_i, eps2) || !licq(&pj.a, &lam_j, eps2)) {
        return Err(Error::DualDegenerate);
    }
    Ok(DistanceResult { h, zi, zj, sstar, lam_i, lam_j, act_i, act_j })
}

fn licq(a: &DMatrix<f64>, lam: &DVector<f64>, eps2: f64) -> bool {
    let rows: Vec<usize> = (0..lam.len()).filter(|&k| lam[k] > eps2).collect();
    if rows.len() > a.ncols() {
        return false;
    }
    if rows.is_empty() {
        return true;
    }
    let m = DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)]);
    let sv = m.singular_values();
    sv.min() > 1e-9 * sv.max()
}

/// `−¼ λi Āi Āiᵀ λiᵀ − λi b̄i − λj b̄j`.
pub fn lagrangian_value(lam_i: &DVector<f64>, lam_j: &DVector<f64>, pi: &PlacedHRep, pj: &PlacedHRep) -> Result<f64> {
    if lam_i.len() != pi.num_faces() || lam_j.len() != pj.num_faces() {
        return Err(Error::DimensionMismatch("multiplier length does not match face count".into()));
    }
    let w = pi.a.tr_mul(lam_i);
    Ok(-0.25 * w.norm_squared() - lam_i.dot(&pi.b) - lam_j.dot(&pj.b))
}

/// Solves the dual QP directly (the runtime path reads multipliers from the
/// primal instead). Returns `(h, λi, λj)` with `h` the optimal dual value.
pub fn solve_dual_qp(pi: &PlacedHRep, pj: &PlacedHRep) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    check_pair(pi, pj)?;
    let l = pi.dim();
    let (ri, rj) = (pi.num_faces(), pj.num_faces());
    let n = ri + rj;
    let mut prob = QpProblem::new(n);
    let g = &pi.a * pi.a.transpose() * 0.5;
    prob.p.view_mut((0, 0), (ri, ri)).copy_from(&g);
    prob.q = DVector::from_iterator(n, pi.b.iter().chain(pj.b.iter()).copied());
    let mut a_eq = DMatrix::zeros(l, n);
    a_eq.view_mut((0, 0), (l, ri)).copy_from(&pi.a.transpose());
    a_eq.view_mut((0, ri), (l, rj)).copy_from(&pj.a.transpose());
    prob.a_eq = a_eq;
    prob.b_eq = DVector::zeros(l);
    prob.lb = DVector::zeros(n);
    let sol = ActiveSetSolver::new().solve(&prob)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::solver(sol.status, "solving the dual distance QP"));
    }
    let lam_i = sol.x.rows(0, ri).into_owned();
    let lam_j = sol.x.rows(ri, rj).into_owned();
    Ok((-sol.objective, lam_i, lam_j))
}
