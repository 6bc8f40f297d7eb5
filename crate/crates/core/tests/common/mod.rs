#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use polycbf::braking::{build_centralized_qp, fleet_pairs, BrakingLimits, CentralizedConfig, RigidState};
use polycbf::distance::min_distance_dual;
use polycbf::geometry::{exp_so3, place, PlacedHRep, Polytope, Pose};
use polycbf::oracle::SweepBody;
use polycbf::qpsolver::{solve_lp, QpProblem, QpStatus};
use polycbf::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_vector(rng: &mut ChaCha8Rng, l: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random polytope: planes tangent to the unit ball, pushed through a random
/// linear map and scaled. Draws that are unbounded or degenerate are redrawn.
pub fn random_polytope(rng: &mut ChaCha8Rng, l: usize) -> Polytope {
    loop {
        let k = if l == 2 { rng.random_range(3..=8) } else { rng.random_range(5..=10) };
        let normals: Vec<DVector<f64>> = if l == 2 {
            let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            angles.iter().map(|t| DVector::from_vec(vec![t.cos(), t.sin()])).collect()
        } else {
            (0..k).map(|_| unit_vector(rng, 3)).collect()
        };
        let m = DMatrix::identity(l, l) + DMatrix::from_fn(l, l, |_, _| rng.random_range(-0.4..0.4));
        let scale = rng.random_range(0.3..1.2);
        let Some(minv) = (m * scale).try_inverse() else { continue };
        let mut a = DMatrix::zeros(k, l);
        for (r, n) in normals.iter().enumerate() {
            a.row_mut(r).copy_from(&(n.transpose() * &minv));
        }
        if let Ok(p) = Polytope::new(a, DVector::from_element(k, 1.0)) {
            if p.outer_radius() < 2.0 {
                return p;
            }
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    if l == 2 {
        polycbf::geometry::rot2(rng.random_range(-3.2..3.2))
    } else {
        let w = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let r = exp_so3(&w);
        DMatrix::from_column_slice(3, 3, r.as_slice())
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, l: usize, spread: f64) -> Pose {
    let p =
        if spread > 0.0 { DVector::from_fn(l, |_, _| rng.random_range(-spread..spread)) } else { DVector::zeros(l) };
    Pose { p, r: random_rotation(rng, l) }
}

pub struct Pair {
    pub poly_i: Polytope,
    pub pose_i: Pose,
    pub poly_j: Polytope,
    pub pose_j: Pose,
}

impl Pair {
    pub fn placed(&self) -> (PlacedHRep, PlacedHRep) {
        (place(&self.poly_i, &self.pose_i), place(&self.poly_j, &self.pose_j))
    }
}

/// Two random bodies whose centres are `0..4` apart; some draws overlap.
pub fn random_pair(rng: &mut ChaCha8Rng, l: usize) -> Pair {
    let poly_i = random_polytope(rng, l);
    let poly_j = random_polytope(rng, l);
    let pose_i = random_pose(rng, l, 1.0);
    let mut pose_j = random_pose(rng, l, 0.0);
    let d = rng.random_range(0.0..4.0);
    pose_j.p = &pose_i.p + unit_vector(rng, l) * d;
    Pair { poly_i, pose_i, poly_j, pose_j }
}

/// Like [`random_pair`] but guaranteed disjoint with margin.
pub fn separated_pair(rng: &mut ChaCha8Rng, l: usize) -> Pair {
    loop {
        let p = random_pair(rng, l);
        let gap = (&p.pose_j.p - &p.pose_i.p).norm() - p.poly_i.outer_radius() - p.poly_j.outer_radius();
        if gap > 0.05 {
            return p;
        }
    }
}

/// Disjoint pair whose bounding balls about the body origins are at least
/// `gap` apart, so rotations about the origins cannot close it.
pub fn pair_with_gap(rng: &mut ChaCha8Rng, l: usize, gap: f64) -> Pair {
    let mut p = random_pair(rng, l);
    let dir = unit_vector(rng, l);
    let d = p.poly_i.outer_radius() + p.poly_j.outer_radius() + gap + rng.random_range(0.0..0.5);
    p.pose_j.p = &p.pose_i.p + dir * d;
    p
}

/// Smooth motion of a random pair: body i spins in place, body j translates
/// with a drift plus a sinusoid and spins.
pub struct Motion {
    pub pair: Pair,
    pub wi: Vec<f64>,
    pub wj: Vec<f64>,
    pub v: DVector<f64>,
    pub amp: DVector<f64>,
}

impl Motion {
    pub fn random(rng: &mut ChaCha8Rng, l: usize) -> Self {
        let pair = pair_with_gap(rng, l, 0.6);
        let na = if l == 2 { 1 } else { 3 };
        let spin = |rng: &mut ChaCha8Rng| (0..na).map(|_| rng.random_range(-0.3..0.3)).collect::<Vec<f64>>();
        let wi = spin(rng);
        let wj = spin(rng);
        let v = unit_vector(rng, l) * rng.random_range(0.0..0.2);
        let amp = unit_vector(rng, l) * rng.random_range(0.0..0.1);
        Self { pair, wi, wj, v, amp }
    }

    fn rot(&self, r0: &DMatrix<f64>, w: &[f64], t: f64) -> DMatrix<f64> {
        if r0.nrows() == 2 {
            r0 * polycbf::geometry::rot2(w[0] * t)
        } else {
            let e = exp_so3(&Vector3::new(w[0] * t, w[1] * t, w[2] * t));
            r0 * DMatrix::from_column_slice(3, 3, e.as_slice())
        }
    }

    pub fn poses(&self, t: f64) -> (Pose, Pose) {
        let pi = Pose { p: self.pair.pose_i.p.clone(), r: self.rot(&self.pair.pose_i.r, &self.wi, t) };
        let pj = Pose {
            p: &self.pair.pose_j.p + &self.v * t + &self.amp * t.sin(),
            r: self.rot(&self.pair.pose_j.r, &self.wj, t),
        };
        (pi, pj)
    }

    pub fn context(&self, t: f64) -> polycbf::ncbf::PairContext {
        use polycbf::ncbf::{AffineRates, PairContext, Twist};
        let (pose_i, pose_j) = self.poses(t);
        let l = pose_i.dim();
        let placed_i = place(&self.pair.poly_i, &pose_i);
        let placed_j = place(&self.pair.poly_j, &pose_j);
        let result = polycbf::distance::min_distance_dual(&placed_i, &placed_j).unwrap();
        let ti = Twist { vel: DVector::zeros(l), angvel: self.wi.clone() };
        let tj = Twist { vel: &self.v + &self.amp * t.cos(), angvel: self.wj.clone() };
        PairContext {
            i: 0,
            j: 1,
            result,
            rates_i: AffineRates::from_twists(&self.pair.poly_i, &pose_i, &ti, &[]),
            rates_j: AffineRates::from_twists(&self.pair.poly_j, &pose_j, &tj, &[]),
            placed_i,
            placed_j,
        }
    }

    /// `h` and the active sets at time `t`.
    pub fn sample(&self, t: f64) -> (f64, (Vec<usize>, Vec<usize>)) {
        let (pose_i, pose_j) = self.poses(t);
        let r = polycbf::distance::min_distance_dual(
            &place(&self.pair.poly_i, &pose_i),
            &place(&self.pair.poly_j, &pose_j),
        )
        .unwrap();
        (r.h, (r.act_i, r.act_j))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdTally {
    pub matched: usize,
    pub compared: usize,
    pub switches: usize,
}

/// Compares the derivative LP with central differences at `samples` times in
/// `[0, 2]`.
pub fn derivative_check(m: &Motion, samples: usize) -> FdTally {
    let mut tally = FdTally::default();
    for s in 0..samples {
        let t = 2.0 * s as f64 / samples as f64;
        let fd = match polycbf::oracle::finite_diff_hdot(|tt| m.sample(tt), t, 1e-4) {
            Ok(r) => r.value,
            Err(_) => {
                tally.switches += 1;
                continue;
            }
        };
        let ctx = m.context(t);
        let g = polycbf::ncbf::hdot_lp(&ctx, &DVector::zeros(0), 1e-5, 1e3).unwrap().g;
        tally.compared += 1;
        if (g - fd).abs() <= 1e-3 * fd.abs().max(1e-3) {
            tally.matched += 1;
        }
    }
    tally
}

/// Nonnegative `(λi, λj)` with `Āiᵀλi + Ājᵀλj = 0`: a random `λi` completed
/// by an LP for `λj`, plus a random multiple of the optimal multipliers.
pub fn feasible_multipliers(r: &mut ChaCha8Rng, pi: &PlacedHRep, pj: &PlacedHRep) -> (DVector<f64>, DVector<f64>) {
    let (ri, rj) = (pi.num_faces(), pj.num_faces());
    let lam_i = DVector::from_fn(ri, |_, _| if r.random_bool(0.5) { r.random_range(0.0..3.0) } else { 0.0 });
    let w = pi.a.tr_mul(&lam_i);
    let mut lp = QpProblem::new(rj);
    lp.q = DVector::from_element(rj, 1.0);
    lp.a_eq = pj.a.transpose();
    lp.b_eq = -w;
    lp.lb = DVector::zeros(rj);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let lam_j = sol.x.map(|v| v.max(0.0));
    let opt = min_distance_dual(pi, pj).unwrap();
    let t = r.random_range(0.0..3.0);
    (lam_i + opt.lam_i * t, lam_j + opt.lam_j * t)
}

pub fn random_state(r: &mut ChaCha8Rng, pos: Vector3<f64>, speed: f64) -> RigidState {
    let w = Vector3::from_fn(|_, _| r.random_range(-2.0..2.0));
    let v = Vector3::from_fn(|_, _| r.random_range(-1.0..1.0)).normalize() * r.random_range(0.0..speed);
    RigidState { r: pos, v, rot: exp_so3(&w) }
}

pub fn sweep_body<'a>(poly: &'a Polytope, s: &RigidState) -> SweepBody<'a> {
    SweepBody {
        poly,
        pose: Pose { p: DVector::from_column_slice(s.r.as_slice()), r: polycbf::sim::rot_to_dmatrix(&s.rot) },
        v: DVector::from_column_slice(s.v.as_slice()),
    }
}

/// Random robot pair and braking horizon; bodies start disjoint.
pub fn random_hull_case(r: &mut ChaCha8Rng) -> (Polytope, Polytope, RigidState, RigidState, f64) {
    let pi = random_polytope(r, 3);
    let pj = random_polytope(r, 3);
    let dir = Vector3::from_fn(|_, _| r.random_range(-1.0..1.0)).normalize();
    let d = pi.outer_radius() + pj.outer_radius() + r.random_range(0.05..2.0);
    let si = random_state(r, Vector3::zeros(), 1.0);
    let sj = random_state(r, dir * d, 1.0);
    (pi, pj, si, sj, r.random_range(0.5..3.0))
}

pub fn prism() -> Polytope {
    let c = 0.866_025_403_784_438_6;
    Polytope::from_rows(
        &[vec![0.0, -1.0, 0.0], vec![c, 0.5, 0.0], vec![-c, 0.5, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]],
        &[0.2; 5],
    )
    .unwrap()
}

/// Variable and constraint counts of the centralized QP for `n` prisms on a
/// ring.
pub fn centralized_size(n: usize) -> (usize, usize) {
    let polys = vec![prism(); n];
    let states: Vec<RigidState> = (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            RigidState::at_rest(Vector3::new(5.0 * a.cos(), 5.0 * a.sin(), 0.0), Matrix3::identity())
        })
        .collect();
    let limits = vec![BrakingLimits { a_max: 1.0, w_max: 0.6, v_max: 4.0 }; n];
    let pairs = fleet_pairs(&states, &polys, 4.0, Execution::Sequential).unwrap();
    let qp =
        build_centralized_qp(&states, &polys, &pairs, &DVector::zeros(6 * n), &limits, &CentralizedConfig::default())
            .unwrap();
    (qp.size.variables, qp.size.constraints_max())
}
