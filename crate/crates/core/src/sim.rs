//! Closed-loop sampled-data simulation of the sofa and rigid-body fleets.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_4;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

use crate::braking::{
    compute_tm, fleet_pairs, pair_indices, rho, solve_centralized, BrakingLimits, RigidState, Supervisor,
    SupervisorMode,
};
use crate::distance::min_distance_dual_with;
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, hat, orthonormalize, place, Polytope, Pose};
use crate::ncbf::{
    solve_safety_filter_with, AffineRates, ClfConstraint, ControlDecision, ControllerConfig, DecisionStatus,
    PairContext, Twist,
};
use crate::par::{self, Execution};
use crate::qpsolver::ActiveSetSolver;
use crate::scenario::{Body, BodyKind, ScenarioConfig, ScenarioKind};
use crate::trace::{Trace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SofaState {
    pub z1: f64,
    pub z2: f64,
    pub theta: f64,
}

impl SofaState {
    pub fn pose(&self) -> Pose {
        Pose::planar(self.z1, self.z2, self.theta)
    }
}

/// `(ż₁, ż₂, θ̇) = (v cos(θ + π/4), v sin(θ + π/4), ω)`.
pub fn sofa_dynamics(state: &SofaState, u: &[f64]) -> [f64; 3] {
    let (s, c) = (state.theta + FRAC_PI_4).sin_cos();
    [u[0] * c, u[0] * s, u[1]]
}

/// Body twists produced by a unit value of each sofa input.
pub fn sofa_channels(state: &SofaState) -> [Twist; 2] {
    let (s, c) = (state.theta + FRAC_PI_4).sin_cos();
    [
        Twist { vel: DVector::from_vec(vec![c, s]), angvel: vec![0.0] },
        Twist { vel: DVector::zeros(2), angvel: vec![1.0] },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfSpec {
    pub zd: [f64; 2],
    pub theta_d: f64,
    pub k: f64,
    pub alpha1: f64,
    pub slack_weight: f64,
}

/// `V = (z₁ − z₁ᵈ)² + (z₂ − z₂ᵈ)² + k (θ − θᵈ)²` and its gradient.
pub fn clf_nominal(state: &SofaState, spec: &ClfSpec) -> (f64, [f64; 3]) {
    let e1 = state.z1 - spec.zd[0];
    let e2 = state.z2 - spec.zd[1];
    let et = state.theta - spec.theta_d;
    (e1 * e1 + e2 * e2 + spec.k * et * et, [2.0 * e1, 2.0 * e2, 2.0 * spec.k * et])
}

/// CLF row `∇V·g u − s ≤ −α₁ V` for the drift-free sofa.
pub fn clf_constraint(state: &SofaState, spec: &ClfSpec) -> ClfConstraint {
    let (v, grad) = clf_nominal(state, spec);
    let rate = sofa_dynamics(state, &[1.0, 0.0]);
    let gv = grad[0] * rate[0] + grad[1] * rate[1];
    ClfConstraint {
        grad_g: DVector::from_vec(vec![gv, grad[2]]),
        rhs: -spec.alpha1 * v,
        slack_weight: spec.slack_weight,
    }
}

/// `(ṙ, v̇, Ṙ) = (v, a, R hat(ω))` with `ω` in the body frame.
pub fn rigid6_dynamics(
    state: &RigidState,
    a: &Vector3<f64>,
    w: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
    (state.v, *a, state.rot * hat(w))
}

/// One zero-order-hold step, exact for constant `a` and `ω`.
pub fn integrate_rigid(state: &RigidState, a: &Vector3<f64>, w: &Vector3<f64>, dt: f64) -> RigidState {
    RigidState {
        r: state.r + state.v * dt + a * (0.5 * dt * dt),
        v: state.v + a * dt,
        rot: orthonormalize(&(state.rot * exp_so3(&(w * dt)))),
    }
}

/// Planar scene: one sofa made of rigidly attached arms, plus static walls.
#[derive(Debug, Clone)]
pub struct SofaWorld {
    pub bodies: Vec<Body>,
    /// `(arm body index, wall body index)`.
    pub pairs: Vec<(usize, usize)>,
}

impl SofaWorld {
    pub fn new(bodies: Vec<Body>) -> Self {
        let arms: Vec<usize> = (0..bodies.len()).filter(|&k| bodies[k].kind == BodyKind::SofaArm).collect();
        let walls: Vec<usize> = (0..bodies.len()).filter(|&k| bodies[k].kind == BodyKind::Static).collect();
        let pairs = arms.iter().flat_map(|&a| walls.iter().map(move |&w| (a, w))).collect();
        Self { bodies, pairs }
    }

    /// World pose of an arm; its configured pose is an offset in the sofa frame.
    pub fn arm_pose(&self, arm: usize, state: &SofaState) -> Pose {
        let sofa = state.pose();
        let local = &self.bodies[arm].pose;
        Pose { p: &sofa.r * &local.p + &sofa.p, r: &sofa.r * &local.r }
    }

    pub fn pair_name(&self, k: usize) -> String {
        let (a, w) = self.pairs[k];
        format!("{}_{}", self.bodies[a].name, self.bodies[w].name)
    }

    pub fn contexts(&self, state: &SofaState, eps2: f64, exec: Execution) -> Result<Vec<PairContext>> {
        let channels = sofa_channels(state);
        par::map(exec, &self.pairs, |&(a, w)| {
            let arm = &self.bodies[a];
            let wall = &self.bodies[w];
            let pose = self.arm_pose(a, state);
            let placed_i = place(&arm.poly, &pose);
            let placed_j = place(&wall.poly, &wall.pose);
            let result = min_distance_dual_with(&mut ActiveSetSolver::new(), &placed_i, &placed_j, eps2)?;
            // The sofa frame rotates about its own origin, so an arm offset
            // picks up the lever-arm velocity ω × (R p_local).
            let lever = &pose.p - &state.pose().p;
            let rot_channel = Twist { vel: DVector::from_vec(vec![-lever[1], lever[0]]), angvel: vec![1.0] };
            let rates_i =
                AffineRates::from_twists(&arm.poly, &pose, &Twist::zero(2), &[channels[0].clone(), rot_channel]);
            let rates_j = AffineRates::fixed(wall.poly.num_faces(), 2, 2);
            Ok(PairContext { i: a, j: w, result, placed_i, placed_j, rates_i, rates_j })
        })
        .into_iter()
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SofaRun {
    pub world: SofaWorld,
    pub state: SofaState,
    pub ctrl: ControllerConfig,
    pub clf: Option<ClfSpec>,
    pub dt: f64,
    pub duration: f64,
    pub record_timing: bool,
}

#[derive(Debug, Clone)]
pub struct SofaOutcome {
    pub trace: Trace,
    pub final_state: SofaState,
    pub min_h: f64,
    pub v_initial: f64,
    pub v_final: f64,
    pub deadlock: bool,
    pub deadlock_time: Option<f64>,
    /// Mean wall time per step of the distance solves plus the filter QP.
    pub mean_step_ms: f64,
    pub filter_sizes: Vec<crate::ncbf::ProblemSize>,
    /// Per step, per pair: `(h, L̇)` for derivative checks.
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub state: SofaState,
    pub u: [f64; 2],
    pub h: Vec<f64>,
    pub ldot: Vec<f64>,
}

const DEADLOCK_U: f64 = 1e-4;
const DEADLOCK_DV: f64 = 1e-8;
const DEADLOCK_WINDOW: f64 = 2.0;
/// A plateau counts as a deadlock only while `V` is above this share of its
/// initial value; below it the robot is at the goal up to margins.
const DEADLOCK_GOAL_FRACTION: f64 = 1e-3;

impl SofaRun {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        if cfg.kind != ScenarioKind::Sofa {
            return Err(Error::Config("not a sofa scenario".into()));
        }
        let sofa = cfg.sofa.as_ref().ok_or_else(|| Error::Config("missing sofa section".into()))?;
        let clf = cfg.controller.clf.as_ref().map(|c| ClfSpec {
            zd: c.goal,
            theta_d: c.theta_d,
            k: c.k,
            alpha1: c.alpha1,
            slack_weight: cfg.controller.slack_weight,
        });
        Ok(Self {
            world: SofaWorld::new(cfg.bodies()?),
            state: SofaState { z1: sofa.z1, z2: sofa.z2, theta: sofa.theta },
            ctrl: cfg.controller_config()?,
            clf,
            dt: cfg.sim.dt,
            duration: cfg.sim.duration,
            record_timing: cfg.sim.record_timing,
        })
    }

    fn trace_layout(&self) -> Trace {
        let mut cols: Vec<String> = vec!["t".into(), "sofa_z1".into(), "sofa_z2".into(), "sofa_theta".into()];
        cols.push("u_v".into());
        cols.push("u_w".into());
        let names: Vec<String> = (0..self.world.pairs.len()).map(|k| self.world.pair_name(k)).collect();
        cols.extend(names.iter().map(|n| format!("h_{n}")));
        cols.extend(names.iter().map(|n| format!("Ldot_{n}")));
        cols.push("slack".into());
        Trace::new(cols, vec!["status".into()])
    }

    pub fn run(&self, exec: Execution) -> Result<SofaOutcome> {
        let steps = (self.duration / self.dt + 1e-9).floor() as usize;
        let mut trace = self.trace_layout();
        let mut state = self.state;
        let mut solver = ActiveSetSolver::new();
        let eps1_sq = self.ctrl.eps1 * self.ctrl.eps1;
        let u_nom = DVector::zeros(2);
        let v_initial = self.clf.map_or(0.0, |c| clf_nominal(&state, &c).0);
        let mut v_prev = v_initial;
        let mut still_since: Option<f64> = None;
        let mut deadlock_time = None;
        let mut min_h = f64::INFINITY;
        let mut total_ms = 0.0;
        let mut sizes = Vec::with_capacity(steps + 1);
        let mut records = Vec::with_capacity(steps + 1);

        for step in 0..=steps {
            let t = step as f64 * self.dt;
            let start = Instant::now();
            let ctxs = self.world.contexts(&state, self.ctrl.eps2, exec)?;
            for c in &ctxs {
                min_h = min_h.min(c.result.h);
                if c.result.h < eps1_sq - crate::ncbf::MARGIN_ROUNDOFF {
                    return Err(Error::SafetyViolated { i: c.i, j: c.j, h: c.result.h });
                }
            }
            let clf_row = self.clf.map(|c| clf_constraint(&state, &c));
            let decision = solve_safety_filter_with(&mut solver, &ctxs, &u_nom, &self.ctrl, clf_row.as_ref())?;
            let step_ms = start.elapsed().as_secs_f64() * 1e3;
            total_ms += step_ms;
            match decision.status {
                DecisionStatus::Optimal => {}
                DecisionStatus::Infeasible => {
                    return Err(Error::solver(crate::qpsolver::QpStatus::Infeasible, format!("filtering at t = {t}")))
                }
                DecisionStatus::SafetyViolated => unreachable!("margins are checked before filtering"),
            }
            sizes.push(decision.size);
            let u = [decision.u[0], decision.u[1]];

            let mut values = vec![t, state.z1, state.z2, state.theta, u[0], u[1]];
            values.extend(decision.pairs.iter().map(|p| p.h));
            values.extend(decision.pairs.iter().map(|p| p.ldot));
            values.push(decision.slack);
            trace.push(TraceRow {
                values,
                labels: vec![decision.status.as_str().into()],
                solve_ms: if self.record_timing { step_ms } else { 0.0 },
            });
            records.push(StepRecord {
                t,
                state,
                u,
                h: decision.pairs.iter().map(|p| p.h).collect(),
                ldot: decision.pairs.iter().map(|p| p.ldot).collect(),
            });

            let v_now = self.clf.map_or(0.0, |c| clf_nominal(&state, &c).0);
            let unorm = (u[0] * u[0] + u[1] * u[1]).sqrt();
            if step > 0 && unorm <= DEADLOCK_U && (v_now - v_prev).abs() <= DEADLOCK_DV {
                let since = *still_since.get_or_insert(t);
                if deadlock_time.is_none()
                    && t - since >= DEADLOCK_WINDOW - 1e-9
                    && v_now > DEADLOCK_GOAL_FRACTION * v_initial
                {
                    deadlock_time = Some(t);
                }
            } else {
                still_since = None;
            }
            v_prev = v_now;

            if step == steps {
                break;
            }
            let rate = sofa_dynamics(&state, &u);
            state.z1 += self.dt * rate[0];
            state.z2 += self.dt * rate[1];
            state.theta += self.dt * rate[2];
        }
        let v_final = self.clf.map_or(0.0, |c| clf_nominal(&state, &c).0);
        Ok(SofaOutcome {
            trace,
            final_state: state,
            min_h,
            v_initial,
            v_final,
            deadlock: deadlock_time.is_some(),
            deadlock_time,
            mean_step_ms: total_ms / (steps + 1) as f64,
            filter_sizes: sizes,
            steps: records,
        })
    }
}

/// Rigid-body fleet under the centralized controller and braking supervisor.
#[derive(Debug, Clone)]
pub struct FleetRun {
    pub names: Vec<String>,
    pub polys: Vec<Polytope>,
    pub states: Vec<RigidState>,
    pub limits: Vec<BrakingLimits>,
    pub goals: Vec<Vector3<f64>>,
    pub spins: Vec<Vector3<f64>>,
    pub cfg: crate::braking::CentralizedConfig,
    pub kp: f64,
    pub kd: f64,
    pub dt: f64,
    pub duration: f64,
    pub forced: HashSet<usize>,
    pub record_timing: bool,
}

#[derive(Debug, Clone)]
pub struct FleetOutcome {
    pub trace: Trace,
    pub final_states: Vec<RigidState>,
    pub min_sqrt_rho: f64,
    pub min_h: f64,
    pub latch_count: usize,
    pub max_speed_excess: f64,
    pub infeasible_steps: usize,
    pub mean_step_ms: f64,
}

impl FleetRun {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        if cfg.kind != ScenarioKind::Centralized {
            return Err(Error::Config("not a centralized scenario".into()));
        }
        let (bodies, states, limits) = cfg.fleet()?;
        let goals = cfg.bodies.iter().zip(&states).map(|(b, s)| b.goal.map_or(s.r, Vector3::from)).collect();
        let spins = cfg.bodies.iter().map(|b| Vector3::from(b.spin.unwrap_or([0.0; 3]))).collect();
        Ok(Self {
            names: bodies.iter().map(|b| b.name.clone()).collect(),
            polys: bodies.into_iter().map(|b| b.poly).collect(),
            states,
            limits,
            goals,
            spins,
            cfg: cfg.centralized_config(),
            kp: cfg.centralized.kp,
            kd: cfg.centralized.kd,
            dt: cfg.sim.dt,
            duration: cfg.sim.duration,
            forced: cfg.supervisor.force_infeasible_steps.iter().copied().collect(),
            record_timing: cfg.sim.record_timing,
        })
    }

    /// Saturated PD toward each goal plus the requested spin.
    pub fn nominal(&self, states: &[RigidState]) -> DVector<f64> {
        let mut u = DVector::zeros(6 * states.len());
        for (k, s) in states.iter().enumerate() {
            let lim = &self.limits[k];
            let a = (self.goals[k] - s.r) * self.kp - s.v * self.kd;
            for d in 0..3 {
                u[6 * k + d] = a[d].clamp(-lim.a_max, lim.a_max);
                u[6 * k + 3 + d] = self.spins[k][d].clamp(-lim.w_max, lim.w_max);
            }
        }
        u
    }

    fn trace_layout(&self) -> Trace {
        let mut cols = vec!["t".to_string()];
        for n in &self.names {
            for c in ["rx", "ry", "rz", "vx", "vy", "vz", "qw", "qx", "qy", "qz"] {
                cols.push(format!("{n}_{c}"));
            }
        }
        for n in &self.names {
            for c in ["ax", "ay", "az", "wx", "wy", "wz"] {
                cols.push(format!("{n}_{c}"));
            }
        }
        let pairs: Vec<String> = pair_indices(self.names.len())
            .iter()
            .map(|&(i, j)| format!("{}_{}", self.names[i], self.names[j]))
            .collect();
        for prefix in ["h", "Ldot", "sqrt_h", "sqrt_rho"] {
            cols.extend(pairs.iter().map(|p| format!("{prefix}_{p}")));
        }
        cols.push("slack".into());
        Trace::new(cols, vec!["mode".into(), "status".into()])
    }

    pub fn run(&self, exec: Execution) -> Result<FleetOutcome> {
        let tm = compute_tm(&self.limits)?;
        let steps = (self.duration / self.dt + 1e-9).floor() as usize;
        let eps_sq = self.cfg.eps * self.cfg.eps;
        let mut states = self.states.clone();
        let mut sup = Supervisor::new(tm, self.dt);
        let mut trace = self.trace_layout();
        let idx = pair_indices(states.len());
        let mut min_sqrt_rho = f64::INFINITY;
        let mut min_h = f64::INFINITY;
        let mut max_speed_excess = f64::NEG_INFINITY;
        let mut infeasible_steps = 0;
        let mut total_ms = 0.0;

        for step in 0..=steps {
            let t = step as f64 * self.dt;
            let start = Instant::now();
            let pairs = fleet_pairs(&states, &self.polys, tm, exec)?;
            if step == 0 {
                if let Some(p) = pairs.iter().find(|p| p.hull.h < eps_sq - crate::ncbf::MARGIN_ROUNDOFF) {
                    return Err(Error::SafetyViolated { i: p.i, j: p.j, h: p.hull.h });
                }
            }
            let rhos: Vec<f64> =
                par::map(exec, &idx, |&(i, j)| rho(&states[i], &states[j], &self.polys[i], &self.polys[j]))
                    .into_iter()
                    .collect::<Result<_>>()?;
            let decision: Option<ControlDecision> = if sup.braking() {
                None
            } else {
                let nominal = self.nominal(&states);
                let limits = if self.forced.contains(&step) { tightened(&self.limits) } else { self.limits.clone() };
                Some(solve_centralized(&states, &self.polys, &pairs, &nominal, &limits, &self.cfg)?)
            };
            if decision.as_ref().is_some_and(|d| d.status != DecisionStatus::Optimal) {
                infeasible_steps += 1;
            }
            let (u, mode) = sup.select(&states, decision.as_ref());
            let step_ms = start.elapsed().as_secs_f64() * 1e3;
            total_ms += step_ms;

            for p in &pairs {
                min_h = min_h.min(p.hull.h);
            }
            for r in &rhos {
                min_sqrt_rho = min_sqrt_rho.min(r.sqrt());
            }
            for (s, l) in states.iter().zip(&self.limits) {
                max_speed_excess = max_speed_excess.max(s.v.norm() - l.v_max);
            }

            let mut values = vec![t];
            for s in &states {
                let q = UnitQuaternion::from_matrix(&s.rot);
                values.extend_from_slice(s.r.as_slice());
                values.extend_from_slice(s.v.as_slice());
                values.extend_from_slice(&[q.w, q.i, q.j, q.k]);
            }
            values.extend(u.iter().copied());
            let ldots: Vec<f64> = match (&decision, mode) {
                (Some(d), SupervisorMode::Nominal) => d.pairs.iter().map(|p| p.ldot).collect(),
                _ => vec![f64::NAN; pairs.len()],
            };
            values.extend(pairs.iter().map(|p| p.hull.h));
            values.extend(ldots);
            values.extend(pairs.iter().map(|p| p.hull.h.sqrt()));
            values.extend(rhos.iter().map(|r| r.sqrt()));
            values.push(0.0);
            let status = decision.as_ref().map_or("skipped", |d| d.status.as_str());
            let mode_s = match mode {
                SupervisorMode::Nominal => "nominal",
                SupervisorMode::Braking => "braking",
            };
            trace.push(TraceRow {
                values,
                labels: vec![mode_s.into(), status.into()],
                solve_ms: if self.record_timing { step_ms } else { 0.0 },
            });

            if step == steps {
                break;
            }
            states = states
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let a = Vector3::new(u[6 * k], u[6 * k + 1], u[6 * k + 2]);
                    let w = Vector3::new(u[6 * k + 3], u[6 * k + 4], u[6 * k + 5]);
                    integrate_rigid(s, &a, &w, self.dt)
                })
                .collect();
        }
        Ok(FleetOutcome {
            trace,
            final_states: states,
            min_sqrt_rho,
            min_h,
            latch_count: sup.latch_count,
            max_speed_excess,
            infeasible_steps,
            mean_step_ms: total_ms / (steps + 1) as f64,
        })
    }
}

/// Contradictory limits: near-zero acceleration with a zero speed bound, so
/// any moving robot makes the controller QP infeasible.
fn tightened(limits: &[BrakingLimits]) -> Vec<BrakingLimits> {
    limits.iter().map(|l| BrakingLimits { a_max: 1e-9, w_max: l.w_max, v_max: 0.0 }).collect()
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Sofa(SofaOutcome),
    Fleet(FleetOutcome),
}

impl Outcome {
    pub fn trace(&self) -> &Trace {
        match self {
            Outcome::Sofa(o) => &o.trace,
            Outcome::Fleet(o) => &o.trace,
        }
    }
}

pub fn run(cfg: &ScenarioConfig, exec: Execution) -> Result<Outcome> {
    match cfg.kind {
        ScenarioKind::Sofa => Ok(Outcome::Sofa(SofaRun::from_config(cfg)?.run(exec)?)),
        ScenarioKind::Centralized => Ok(Outcome::Fleet(FleetRun::from_config(cfg)?.run(exec)?)),
    }
}

/// Rotation matrix as a dynamic matrix, for callers working with [`Pose`].
pub fn rot_to_dmatrix(r: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, r.as_slice())
}
