//! Declarative scenario files (JSON).

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Deserialize;

use crate::braking::{BrakingLimits, CentralizedConfig, RigidState};
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, Polytope, Pose};
use crate::ncbf::ControllerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Sofa,
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BodyKind {
    Static,
    SofaArm,
    Rigid6,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub rotvec: Option<[f64; 3]>,
    #[serde(default, rename = "R")]
    pub r: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    pub a_max: f64,
    pub w_max: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub name: String,
    pub kind: BodyKind,
    pub polytope: PolytopeConfig,
    #[serde(default)]
    pub pose: PoseConfig,
    #[serde(default)]
    pub velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub goal: Option<[f64; 3]>,
    #[serde(default)]
    pub limits: Option<LimitsConfig>,
    /// Body-frame angular velocity requested by the nominal controller.
    #[serde(default)]
    pub spin: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SofaConfig {
    pub z1: f64,
    pub z2: f64,
    pub theta: f64,
    pub v_max: f64,
    pub w_max: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfConfig {
    pub goal: [f64; 2],
    pub theta_d: f64,
    pub k: f64,
    pub alpha1: f64,
}

fn d_eps1() -> f64 {
    0.015
}
fn d_eps2() -> f64 {
    1e-5
}
fn d_m() -> f64 {
    1e3
}
fn d_one() -> f64 {
    1.0
}
fn d_slack() -> f64 {
    100.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "d_eps1")]
    pub eps1: f64,
    #[serde(default = "d_eps2")]
    pub eps2: f64,
    #[serde(default = "d_m", rename = "M")]
    pub m_bound: f64,
    #[serde(default = "d_one")]
    pub gamma: f64,
    #[serde(default)]
    pub q_diag: Option<Vec<f64>>,
    #[serde(default = "d_slack")]
    pub slack_weight: f64,
    #[serde(default)]
    pub clf: Option<ClfConfig>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            eps1: d_eps1(),
            eps2: d_eps2(),
            m_bound: d_m(),
            gamma: 1.0,
            q_diag: None,
            slack_weight: d_slack(),
            clf: None,
        }
    }
}

fn d_eps() -> f64 {
    0.05
}
fn d_kp() -> f64 {
    0.5
}
fn d_kd() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedSection {
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_one")]
    pub alpha2: f64,
    #[serde(default = "d_one")]
    pub alpha3: f64,
    #[serde(default = "d_kp")]
    pub kp: f64,
    #[serde(default = "d_kd")]
    pub kd: f64,
}

impl Default for CentralizedSection {
    fn default() -> Self {
        Self { eps: d_eps(), alpha2: 1.0, alpha3: 1.0, kp: d_kp(), kd: d_kd() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write measured solve times into the trace. Off by default so that
    /// repeated runs produce identical files.
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorSection {
    /// Steps at which the controller QP is built with contradictory bounds.
    #[serde(default)]
    pub force_infeasible_steps: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub bodies: Vec<BodyConfig>,
    #[serde(default)]
    pub sofa: Option<SofaConfig>,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub centralized: CentralizedSection,
    pub sim: SimSection,
    #[serde(default)]
    pub supervisor: SupervisorSection,
    #[serde(default)]
    pub output: Option<String>,
}

/// A body with its validated polytope and initial pose.
#[derive(Debug, Clone)]
pub struct Body {
    pub name: String,
    pub kind: BodyKind,
    pub poly: Polytope,
    pub pose: Pose,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim.dt > 0.0 && self.sim.duration >= 0.0 && self.sim.dt.is_finite() && self.sim.duration.is_finite())
        {
            return Err(Error::Config("sim.dt must be positive and sim.duration non-negative".into()));
        }
        let bodies = self.bodies()?;
        match self.kind {
            ScenarioKind::Sofa => {
                let sofa =
                    self.sofa.as_ref().ok_or_else(|| Error::Config("sofa scenario needs a `sofa` section".into()))?;
                if !(sofa.v_max > 0.0 && sofa.w_max > 0.0) {
                    return Err(Error::Config("sofa input bounds must be positive".into()));
                }
                if bodies.iter().any(|b| b.kind == BodyKind::Rigid6) {
                    return Err(Error::Config("rigid6 bodies are not allowed in a sofa scenario".into()));
                }
                if !bodies.iter().any(|b| b.kind == BodyKind::SofaArm) {
                    return Err(Error::Config("sofa scenario has no sofa-arm body".into()));
                }
                if bodies.iter().any(|b| b.poly.dim() != 2) {
                    return Err(Error::Config("sofa scenario bodies must be planar".into()));
                }
                if let Some(c) = &self.controller.clf {
                    if !(c.k >= 0.0 && c.alpha1 > 0.0 && self.controller.slack_weight > 0.0) {
                        return Err(Error::Config("clf needs k >= 0, alpha1 > 0, slack_weight > 0".into()));
                    }
                }
                self.controller_config()?.validate()?;
            }
            ScenarioKind::Centralized => {
                if bodies.iter().any(|b| b.kind != BodyKind::Rigid6) {
                    return Err(Error::Config("centralized scenarios contain only rigid6 bodies".into()));
                }
                if bodies.is_empty() {
                    return Err(Error::Config("centralized scenario has no robots".into()));
                }
                for b in &self.bodies {
                    let l = b.limits.ok_or_else(|| Error::Config(format!("body {} needs limits", b.name)))?;
                    if !(l.a_max > 0.0 && l.w_max > 0.0 && l.v_max > 0.0) {
                        return Err(Error::Config(format!("body {} limits must be positive", b.name)));
                    }
                }
                let c = &self.centralized;
                if !(c.eps > 0.0 && c.alpha2 > 0.0 && c.alpha3 > 0.0) {
                    return Err(Error::Config("centralized eps, alpha2, alpha3 must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn bodies(&self) -> Result<Vec<Body>> {
        let mut names = std::collections::HashSet::new();
        self.bodies
            .iter()
            .map(|b| {
                if !names.insert(b.name.as_str()) {
                    return Err(Error::Config(format!("duplicate body name {}", b.name)));
                }
                let poly = Polytope::from_rows(&b.polytope.a, &b.polytope.b)
                    .map_err(|e| Error::Config(format!("body {}: {e}", b.name)))?;
                let pose =
                    pose_from(&b.pose, poly.dim()).map_err(|e| Error::Config(format!("body {}: {e}", b.name)))?;
                Ok(Body { name: b.name.clone(), kind: b.kind, poly, pose })
            })
            .collect()
    }

    pub fn controller_config(&self) -> Result<ControllerConfig> {
        let c = &self.controller;
        let sofa = self.sofa.as_ref().ok_or_else(|| Error::Config("missing sofa section".into()))?;
        let mut cfg = ControllerConfig::new(2);
        cfg.eps1 = c.eps1;
        cfg.eps2 = c.eps2;
        cfg.m_bound = c.m_bound;
        cfg.gamma = c.gamma;
        if let Some(q) = &c.q_diag {
            if q.len() != 2 {
                return Err(Error::Config("controller.q_diag must have 2 entries".into()));
            }
            cfg.q = DMatrix::from_diagonal(&DVector::from_column_slice(q));
        }
        cfg.input_lb = DVector::from_vec(vec![-sofa.v_max, -sofa.w_max]);
        cfg.input_ub = DVector::from_vec(vec![sofa.v_max, sofa.w_max]);
        Ok(cfg)
    }

    pub fn centralized_config(&self) -> CentralizedConfig {
        CentralizedConfig {
            eps: self.centralized.eps,
            eps2: self.controller.eps2,
            m_bound: self.controller.m_bound,
            alpha2: self.centralized.alpha2,
            alpha3: self.centralized.alpha3,
        }
    }

    /// Initial states and limits of the robots of a centralized scenario.
    pub fn fleet(&self) -> Result<(Vec<Body>, Vec<RigidState>, Vec<BrakingLimits>)> {
        let bodies = self.bodies()?;
        let mut states = Vec::with_capacity(bodies.len());
        let mut limits = Vec::with_capacity(bodies.len());
        for (b, c) in bodies.iter().zip(&self.bodies) {
            let r = Vector3::new(b.pose.p[0], b.pose.p[1], b.pose.p[2]);
            let rot = Matrix3::from_iterator(b.pose.r.iter().copied());
            let v = Vector3::from(c.velocity.unwrap_or([0.0; 3]));
            states.push(RigidState { r, v, rot });
            let l = c.limits.ok_or_else(|| Error::Config(format!("body {} needs limits", c.name)))?;
            limits.push(BrakingLimits { a_max: l.a_max, w_max: l.w_max, v_max: l.v_max });
        }
        Ok((bodies, states, limits))
    }
}

fn pose_from(p: &PoseConfig, l: usize) -> std::result::Result<Pose, String> {
    let pos = p.p.clone().unwrap_or_else(|| vec![0.0; l]);
    if pos.len() != l {
        return Err(format!("pose.p must have {l} entries"));
    }
    let pos = DVector::from_vec(pos);
    if l == 2 {
        if p.rotvec.is_some() || p.r.is_some() {
            return Err("planar poses take `theta` only".into());
        }
        let mut pose = Pose::planar(0.0, 0.0, p.theta.unwrap_or(0.0));
        pose.p = pos;
        return Ok(pose);
    }
    if p.theta.is_some() {
        return Err("spatial poses take `rotvec` or `R`".into());
    }
    let rot = match (p.rotvec, p.r) {
        (Some(_), Some(_)) => return Err("give either `rotvec` or `R`, not both".into()),
        (Some(w), None) => exp_so3(&Vector3::from(w)),
        (None, Some(r)) => Matrix3::from_fn(|i, j| r[i][j]),
        (None, None) => Matrix3::identity(),
    };
    let pose = Pose { p: pos, r: DMatrix::from_column_slice(3, 3, rot.as_slice()) };
    pose.validate().map_err(|e| e.to_string())?;
    Ok(pose)
}
