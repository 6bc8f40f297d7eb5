//! Derivative LP for `ḣ`, the Lagrangian rate `L̇`, and the QP safety filter.
//!
//! For a pair with optimal multipliers `λi, λj`, the rate of the dual value is
//!
//! ```text
//! L̇ = −½ λi Āi Āiᵀ λ̇iᵀ − ½ λi Āi Ȧiᵀ λiᵀ − λ̇i b̄i − λi ḃi − λ̇j b̄j − λj ḃj
//! ```
//!
//! subject to `Āiᵀ λ̇i + Ājᵀ λ̇j + Ȧiᵀ λi + Ȧjᵀ λj = 0` and `λ̇k ≥ 0` where
//! `λk` is (almost) zero. Maximizing over `λ̇` yields `ḣ` away from active-set
//! switches and a lower bound everywhere, so constraining it to be at least
//! `−γ (h − ε₁²)` keeps the pair separated.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::distance::{DistanceResult, EPS2_DEFAULT};
use crate::error::{Error, Result};
use crate::geometry::{hrep_rates, HRepRates, PlacedHRep, Polytope, Pose};
use crate::qpsolver::{ActiveSetSolver, QpProblem, QpStatus};

/// Absolute slack on `h >= margin` checks. Closed-loop runs settle onto the
/// boundary and the distance QP returns it only to rounding.
pub const MARGIN_ROUNDOFF: f64 = 1e-12;

/// Face-matrix rates as an affine function of the input:
/// `Ȧ(u) = Ȧ₀ + Σ_k u_k Ȧ_k`, likewise for `ḃ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRates {
    pub a_dot0: DMatrix<f64>,
    pub a_dot_u: Vec<DMatrix<f64>>,
    pub b_dot0: DVector<f64>,
    pub b_dot_u: Vec<DVector<f64>>,
}

/// Body velocity `(translational, angular)`; angular has one entry in 2D and
/// three (body frame) in 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct Twist {
    pub vel: DVector<f64>,
    pub angvel: Vec<f64>,
}

impl Twist {
    pub fn zero(l: usize) -> Self {
        Self { vel: DVector::zeros(l), angvel: vec![0.0; if l == 2 { 1 } else { 3 }] }
    }
}

impl AffineRates {
    /// Rates of a body that does not move and is not actuated.
    pub fn fixed(r: usize, l: usize, inputs: usize) -> Self {
        Self {
            a_dot0: DMatrix::zeros(r, l),
            a_dot_u: vec![DMatrix::zeros(r, l); inputs],
            b_dot0: DVector::zeros(r),
            b_dot_u: vec![DVector::zeros(r); inputs],
        }
    }

    /// Builds the map from a drift twist and one twist per input channel,
    /// using that the rates are linear in the body velocity.
    pub fn from_twists(poly: &Polytope, pose: &Pose, drift: &Twist, channels: &[Twist]) -> Self {
        let d = hrep_rates(poly, pose, &drift.vel, &drift.angvel);
        let mut a_dot_u = Vec::with_capacity(channels.len());
        let mut b_dot_u = Vec::with_capacity(channels.len());
        for c in channels {
            let r = hrep_rates(poly, pose, &c.vel, &c.angvel);
            a_dot_u.push(r.a_dot);
            b_dot_u.push(r.b_dot);
        }
        Self { a_dot0: d.a_dot, a_dot_u, b_dot0: d.b_dot, b_dot_u }
    }

    pub fn num_inputs(&self) -> usize {
        self.a_dot_u.len()
    }

    pub fn eval(&self, u: &DVector<f64>) -> HRepRates {
        let mut a_dot = self.a_dot0.clone();
        let mut b_dot = self.b_dot0.clone();
        for k in 0..self.num_inputs() {
            a_dot += &self.a_dot_u[k] * u[k];
            b_dot += &self.b_dot_u[k] * u[k];
        }
        HRepRates { a_dot, b_dot }
    }
}

#[derive(Debug, Clone)]
pub struct PairContext {
    pub i: usize,
    pub j: usize,
    pub result: DistanceResult,
    pub placed_i: PlacedHRep,
    pub placed_j: PlacedHRep,
    pub rates_i: AffineRates,
    pub rates_j: AffineRates,
}

/// `L̇ = c_i·λ̇i + c_j·λ̇j + c0 + c_u·u`.
#[derive(Debug, Clone)]
pub struct LdotAffine {
    pub c_i: DVector<f64>,
    pub c_j: DVector<f64>,
    pub c0: f64,
    pub c_u: DVector<f64>,
}

/// `Āiᵀλ̇i + Ājᵀλ̇j + a_u u = rhs`.
#[derive(Debug, Clone)]
pub struct RateEquality {
    pub a_i: DMatrix<f64>,
    pub a_j: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl PairContext {
    pub fn num_inputs(&self) -> usize {
        self.rates_i.num_inputs()
    }

    pub fn ldot_affine(&self) -> LdotAffine {
        let li = &self.result.lam_i;
        let lj = &self.result.lam_j;
        let pi = &self.placed_i;
        let pj = &self.placed_j;
        let w = pi.a.tr_mul(li);
        let c_i = -(&pi.a * &w) * 0.5 - &pi.b;
        let c_j = -pj.b.clone();
        let term = |ad: &DMatrix<f64>, bdi: &DVector<f64>, bdj: &DVector<f64>| -> f64 {
            -0.5 * w.dot(&ad.tr_mul(li)) - li.dot(bdi) - lj.dot(bdj)
        };
        let c0 = term(&self.rates_i.a_dot0, &self.rates_i.b_dot0, &self.rates_j.b_dot0);
        let m = self.num_inputs();
        let c_u = DVector::from_fn(m, |k, _| {
            term(&self.rates_i.a_dot_u[k], &self.rates_i.b_dot_u[k], &self.rates_j.b_dot_u[k])
        });
        LdotAffine { c_i, c_j, c0, c_u }
    }

    pub fn rate_equality(&self) -> RateEquality {
        let li = &self.result.lam_i;
        let lj = &self.result.lam_j;
        let m = self.num_inputs();
        let l = self.placed_i.dim();
        let mut a_u = DMatrix::zeros(l, m);
        for k in 0..m {
            let col = self.rates_i.a_dot_u[k].tr_mul(li) + self.rates_j.a_dot_u[k].tr_mul(lj);
            a_u.set_column(k, &col);
        }
        let rhs = -(self.rates_i.a_dot0.tr_mul(li) + self.rates_j.a_dot0.tr_mul(lj));
        RateEquality { a_i: self.placed_i.a.transpose(), a_j: self.placed_j.a.transpose(), a_u, rhs }
    }

    /// Which multiplier rates must be non-negative (`λk < ε₂`).
    pub fn sign_mask(&self, eps2: f64) -> Vec<bool> {
        self.result.lam_i.iter().chain(self.result.lam_j.iter()).map(|&v| v < eps2).collect()
    }
}

/// `L̇` at the given multiplier rates and input.
pub fn ldot_value(
    ctx: &PairContext,
    lamdot_i: &DVector<f64>,
    lamdot_j: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    if lamdot_i.len() != ctx.placed_i.num_faces()
        || lamdot_j.len() != ctx.placed_j.num_faces()
        || u.len() != ctx.num_inputs()
    {
        return Err(Error::DimensionMismatch("ldot_value argument lengths".into()));
    }
    let c = ctx.ldot_affine();
    Ok(c.c_i.dot(lamdot_i) + c.c_j.dot(lamdot_j) + c.c0 + c.c_u.dot(u))
}

#[derive(Debug, Clone)]
pub struct HdotResult {
    pub g: f64,
    pub lamdot_i: DVector<f64>,
    pub lamdot_j: DVector<f64>,
}

/// Maximizes `L̇` over `λ̇` for a fixed input.
pub fn hdot_lp(ctx: &PairContext, u: &DVector<f64>, eps2: f64, m_bound: f64) -> Result<HdotResult> {
    hdot_lp_masked(ctx, u, &ctx.sign_mask(eps2), m_bound)
}

/// As [`hdot_lp`] with an explicit choice of which rates carry a sign row.
pub fn hdot_lp_masked(ctx: &PairContext, u: &DVector<f64>, sign: &[bool], m_bound: f64) -> Result<HdotResult> {
    let ri = ctx.placed_i.num_faces();
    let rj = ctx.placed_j.num_faces();
    if u.len() != ctx.num_inputs() || sign.len() != ri + rj {
        return Err(Error::DimensionMismatch("hdot_lp argument lengths".into()));
    }
    let n = ri + rj;
    let c = ctx.ldot_affine();
    let eq = ctx.rate_equality();
    let l = eq.rhs.len();
    let mut prob = QpProblem::new(n);
    for k in 0..ri {
        prob.q[k] = -c.c_i[k];
    }
    for k in 0..rj {
        prob.q[ri + k] = -c.c_j[k];
    }
    let mut a_eq = DMatrix::zeros(l, n);
    a_eq.view_mut((0, 0), (l, ri)).copy_from(&eq.a_i);
    a_eq.view_mut((0, ri), (l, rj)).copy_from(&eq.a_j);
    prob.a_eq = a_eq;
    prob.b_eq = &eq.rhs - &eq.a_u * u;
    for (k, &nonneg) in sign.iter().enumerate() {
        prob.lb[k] = if nonneg { 0.0 } else { -m_bound };
        prob.ub[k] = m_bound;
    }
    let sol = ActiveSetSolver::new().solve(&prob)?;
    match sol.status {
        QpStatus::Optimal => {}
        status => return Err(Error::solver(status, "solving the derivative LP")),
    }
    let lamdot_i = sol.x.rows(0, ri).into_owned();
    let lamdot_j = sol.x.rows(ri, rj).into_owned();
    let g = c.c_i.dot(&lamdot_i) + c.c_j.dot(&lamdot_j) + c.c0 + c.c_u.dot(u);
    Ok(HdotResult { g, lamdot_i, lamdot_j })
}

/// Soft CLF row `∇V·g u − s ≤ rhs` with `rhs = −α₁V − ∇V·f`.
#[derive(Debug, Clone)]
pub struct ClfConstraint {
    pub grad_g: DVector<f64>,
    pub rhs: f64,
    pub slack_weight: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub m_bound: f64,
    pub gamma: f64,
    pub q: DMatrix<f64>,
    pub input_lb: DVector<f64>,
    pub input_ub: DVector<f64>,
}

impl ControllerConfig {
    pub fn new(inputs: usize) -> Self {
        Self {
            eps1: 0.015,
            eps2: EPS2_DEFAULT,
            m_bound: 1e3,
            gamma: 1.0,
            q: DMatrix::identity(inputs, inputs),
            input_lb: DVector::from_element(inputs, f64::NEG_INFINITY),
            input_ub: DVector::from_element(inputs, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.q.nrows();
        if !(self.eps1 > 0.0 && self.eps2 > 0.0 && self.m_bound > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config("eps1, eps2, M and gamma must be positive".into()));
        }
        if self.q.ncols() != m || self.input_lb.len() != m || self.input_ub.len() != m {
            return Err(Error::Config("input dimensions of Q and bounds disagree".into()));
        }
        if self.q.clone().cholesky().is_none() {
            return Err(Error::Config("Q must be positive definite".into()));
        }
        if (0..m).any(|k| self.input_lb[k] > self.input_ub[k]) {
            return Err(Error::Config("input lower bound exceeds upper bound".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DecisionStatus {
    Optimal,
    Infeasible,
    SafetyViolated,
}

impl DecisionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionStatus::Optimal => "optimal",
            DecisionStatus::Infeasible => "infeasible",
            DecisionStatus::SafetyViolated => "safety_violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDiagnostics {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub ldot: f64,
    /// `L̇ + γ (h − ε₁²)`; non-negative when the barrier row holds.
    pub margin: f64,
}

/// Variable and constraint counts of an assembled controller QP.
///
/// Sign constraints on multiplier rates and slack count as inequalities. A
/// two-sided box on one scalar counts once. The `±M` boxes on multiplier
/// rates only regularize the LP and are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProblemSize {
    pub variables: usize,
    /// Variables that exist in the QP but are not part of the reported count.
    pub auxiliary: usize,
    pub equalities: usize,
    /// Inequalities assuming every multiplier rate carries a sign row.
    pub inequalities_max: usize,
    /// Inequalities actually present at this state.
    pub inequalities_built: usize,
}

impl ProblemSize {
    pub fn constraints_max(&self) -> usize {
        self.equalities + self.inequalities_max
    }

    pub fn constraints_built(&self) -> usize {
        self.equalities + self.inequalities_built
    }
}

#[derive(Debug, Clone)]
pub struct ControlDecision {
    pub u: DVector<f64>,
    pub lamdot: Vec<(DVector<f64>, DVector<f64>)>,
    pub slack: f64,
    pub status: DecisionStatus,
    pub pairs: Vec<PairDiagnostics>,
    pub solve_ms: f64,
    pub size: ProblemSize,
}

/// The assembled filter QP together with its column layout.
#[derive(Debug, Clone)]
pub struct FilterQp {
    pub problem: QpProblem,
    pub inputs: usize,
    /// Start column of each pair's `[λ̇i, λ̇j]` block.
    pub pair_offsets: Vec<usize>,
    pub slack_col: Option<usize>,
    pub size: ProblemSize,
}

pub fn build_filter_qp(
    pairs: &[PairContext],
    u_nom: &DVector<f64>,
    cfg: &ControllerConfig,
    clf: Option<&ClfConstraint>,
) -> Result<FilterQp> {
    let m = u_nom.len();
    if cfg.q.nrows() != m || pairs.iter().any(|p| p.num_inputs() != m) {
        return Err(Error::DimensionMismatch("input dimension of pairs, Q and u_nom".into()));
    }
    let mut offsets = Vec::with_capacity(pairs.len());
    let mut n = m;
    for p in pairs {
        offsets.push(n);
        n += p.placed_i.num_faces() + p.placed_j.num_faces();
    }
    let slack_col = clf.map(|_| {
        n += 1;
        n - 1
    });
    let l_total: usize = pairs.iter().map(|p| p.placed_i.dim()).sum();
    let n_in = pairs.len() + usize::from(clf.is_some());

    let mut prob = QpProblem::new(n);
    prob.a_eq = DMatrix::zeros(l_total, n);
    prob.b_eq = DVector::zeros(l_total);
    prob.a_in = DMatrix::zeros(n_in, n);
    prob.b_in = DVector::zeros(n_in);

    let qq = &cfg.q * 2.0;
    prob.p.view_mut((0, 0), (m, m)).copy_from(&qq);
    let qu = -(&qq * u_nom);
    prob.q.rows_mut(0, m).copy_from(&qu);
    for k in 0..m {
        prob.lb[k] = cfg.input_lb[k];
        prob.ub[k] = cfg.input_ub[k];
    }

    let mut size = ProblemSize { variables: n, ..Default::default() };
    let mut eq_row = 0;
    for (pi, ctx) in pairs.iter().enumerate() {
        let off = offsets[pi];
        let ri = ctx.placed_i.num_faces();
        let rj = ctx.placed_j.num_faces();
        let c = ctx.ldot_affine();
        // −L̇ ≤ γ (h − ε₁²)
        for k in 0..m {
            prob.a_in[(pi, k)] = -c.c_u[k];
        }
        for k in 0..ri {
            prob.a_in[(pi, off + k)] = -c.c_i[k];
        }
        for k in 0..rj {
            prob.a_in[(pi, off + ri + k)] = -c.c_j[k];
        }
        prob.b_in[pi] = cfg.gamma * (ctx.result.h - cfg.eps1 * cfg.eps1) + c.c0;

        let eq = ctx.rate_equality();
        let l = eq.rhs.len();
        prob.a_eq.view_mut((eq_row, 0), (l, m)).copy_from(&eq.a_u);
        prob.a_eq.view_mut((eq_row, off), (l, ri)).copy_from(&eq.a_i);
        prob.a_eq.view_mut((eq_row, off + ri), (l, rj)).copy_from(&eq.a_j);
        prob.b_eq.rows_mut(eq_row, l).copy_from(&eq.rhs);
        eq_row += l;

        let mask = ctx.sign_mask(cfg.eps2);
        for (k, &s) in mask.iter().enumerate() {
            prob.lb[off + k] = if s { 0.0 } else { -cfg.m_bound };
            prob.ub[off + k] = cfg.m_bound;
        }
        size.equalities += l;
        size.inequalities_max += 1 + ri + rj;
        size.inequalities_built += 1 + mask.iter().filter(|&&s| s).count();
    }
    if let (Some(clf), Some(sc)) = (clf, slack_col) {
        let row = pairs.len();
        for k in 0..m {
            prob.a_in[(row, k)] = clf.grad_g[k];
        }
        prob.a_in[(row, sc)] = -1.0;
        prob.b_in[row] = clf.rhs;
        prob.p[(sc, sc)] = 2.0 * clf.slack_weight;
        prob.lb[sc] = 0.0;
        // CLF row and slack sign
        size.inequalities_max += 2;
        size.inequalities_built += 2;
    }
    let bounded_inputs = (0..m).filter(|&k| cfg.input_lb[k].is_finite() || cfg.input_ub[k].is_finite()).count();
    size.inequalities_max += bounded_inputs;
    size.inequalities_built += bounded_inputs;

    Ok(FilterQp { problem: prob, inputs: m, pair_offsets: offsets, slack_col, size })
}

/// Minimally modifies `u_nom` so that every pair keeps `L̇ ≥ −γ (h − ε₁²)`.
pub fn solve_safety_filter(
    pairs: &[PairContext],
    u_nom: &DVector<f64>,
    cfg: &ControllerConfig,
    clf: Option<&ClfConstraint>,
) -> Result<ControlDecision> {
    solve_safety_filter_with(&mut ActiveSetSolver::new(), pairs, u_nom, cfg, clf)
}

pub fn solve_safety_filter_with(
    solver: &mut ActiveSetSolver,
    pairs: &[PairContext],
    u_nom: &DVector<f64>,
    cfg: &ControllerConfig,
    clf: Option<&ClfConstraint>,
) -> Result<ControlDecision> {
    let m = u_nom.len();
    let margin0 = cfg.eps1 * cfg.eps1;
    let fqp = build_filter_qp(pairs, u_nom, cfg, clf)?;
    let zero_diag = |ldot: &dyn Fn(usize) -> f64| -> Vec<PairDiagnostics> {
        pairs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let ld = ldot(k);
                PairDiagnostics {
                    i: p.i,
                    j: p.j,
                    h: p.result.h,
                    ldot: ld,
                    margin: ld + cfg.gamma * (p.result.h - margin0),
                }
            })
            .collect()
    };
    let empty_lamdot = || {
        pairs
            .iter()
            .map(|p| (DVector::zeros(p.placed_i.num_faces()), DVector::zeros(p.placed_j.num_faces())))
            .collect::<Vec<_>>()
    };
    if pairs.iter().any(|p| p.result.h < margin0 - MARGIN_ROUNDOFF) {
        return Ok(ControlDecision {
            u: DVector::zeros(m),
            lamdot: empty_lamdot(),
            slack: 0.0,
            status: DecisionStatus::SafetyViolated,
            pairs: zero_diag(&|_| f64::NAN),
            solve_ms: 0.0,
            size: fqp.size,
        });
    }
    let start = Instant::now();
    let sol = solver.solve(&fqp.problem)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Ok(ControlDecision {
                u: DVector::zeros(m),
                lamdot: empty_lamdot(),
                slack: 0.0,
                status: DecisionStatus::Infeasible,
                pairs: zero_diag(&|_| f64::NAN),
                solve_ms,
                size: fqp.size,
            })
        }
        status => return Err(Error::solver(status, "solving the safety filter")),
    }
    let u = sol.x.rows(0, m).into_owned();
    let lamdot: Vec<_> = pairs
        .iter()
        .zip(&fqp.pair_offsets)
        .map(|(p, &off)| {
            let ri = p.placed_i.num_faces();
            let rj = p.placed_j.num_faces();
            (sol.x.rows(off, ri).into_owned(), sol.x.rows(off + ri, rj).into_owned())
        })
        .collect();
    let diag = zero_diag(&|k| {
        let (a, b) = &lamdot[k];
        ldot_value(&pairs[k], a, b, &u).unwrap_or(f64::NAN)
    });
    let slack = fqp.slack_col.map_or(0.0, |c| sol.x[c].max(0.0));
    Ok(ControlDecision { u, lamdot, slack, status: DecisionStatus::Optimal, pairs: diag, solve_ms, size: fqp.size })
}
