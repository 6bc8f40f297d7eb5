//! Convex polytopes in H-representation and their rigid placement.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::qpsolver::{solve_lp, QpError, QpProblem, QpStatus};

/// Rows whose residual is within this (relative) band count as active at a vertex.
pub const VERTEX_ACTIVE_TOL: f64 = 1e-7;
const VERTEX_FEAS_TOL: f64 = 1e-9;
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("bad dimensions: {0}")]
    Dimension(String),
    #[error("polytope has empty interior")]
    EmptyInterior,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("row {0} is redundant")]
    RedundantRow(usize),
    #[error("vertex {0:?} has more than l active rows")]
    DegenerateVertex(Vec<f64>),
    #[error("rotation matrix is not orthonormal")]
    BadRotation,
    #[error(transparent)]
    Solver(#[from] QpError),
}

#[derive(Debug, Clone)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    vertices: Vec<DVector<f64>>,
    vertex_rows: Vec<Vec<usize>>,
    inner_radius: f64,
}

impl Polytope {
    /// Validated polytope `{z : A z ≤ b}`. Redundant rows are rejected rather
    /// than removed so that multiplier indices always match the caller's faces.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, GeometryError> {
        let (r, l) = a.shape();
        if !(l == 2 || l == 3) {
            return Err(GeometryError::Dimension(format!("expected 2 or 3 columns, got {l}")));
        }
        if b.len() != r {
            return Err(GeometryError::Dimension(format!("A has {r} rows but b has {}", b.len())));
        }
        if r < l + 1 {
            return Err(GeometryError::Dimension(format!("need at least {} rows, got {r}", l + 1)));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::Dimension("non-finite entry".into()));
        }
        if (0..r).any(|k| a.row(k).norm() == 0.0) {
            return Err(GeometryError::Dimension("zero row in A".into()));
        }

        let inner_radius = chebyshev_radius(&a, &b)?;
        let scale = 1.0 + b.amax();
        if inner_radius <= 1e-9 * scale {
            return Err(GeometryError::EmptyInterior);
        }
        check_bounded(&a, &b)?;
        check_redundancy(&a, &b)?;
        let (vertices, vertex_rows) = enumerate(&a, &b)?;
        Ok(Self { a, b, vertices, vertex_rows, inner_radius })
    }

    /// Convenience constructor from row-major nested slices.
    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self, GeometryError> {
        let l = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != l) {
            return Err(GeometryError::Dimension("ragged A".into()));
        }
        let a = DMatrix::from_fn(rows.len(), l, |i, j| rows[i][j]);
        Self::new(a, DVector::from_column_slice(b))
    }

    /// Axis-aligned box `[lo, hi]` with rows ordered `+e1, −e1, +e2, −e2, …`.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        let l = lo.len();
        let mut a = DMatrix::zeros(2 * l, l);
        let mut b = DVector::zeros(2 * l);
        for i in 0..l {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Self::new(a, b)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_faces(&self) -> usize {
        self.a.nrows()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// Indices of the rows active at each vertex (exactly `dim` per vertex).
    pub fn vertex_rows(&self) -> &[Vec<usize>] {
        &self.vertex_rows
    }

    /// Radius of the largest inscribed ball.
    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    /// Largest vertex norm (radius of a ball about the origin containing the body).
    pub fn outer_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        let r = &self.a * z - &self.b;
        r.iter().all(|&v| v <= tol)
    }

    /// Vertex index pairs joined by an edge.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let need = self.dim() - 1;
        let mut out = Vec::new();
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                let shared = self.vertex_rows[i].iter().filter(|k| self.vertex_rows[j].contains(k)).count();
                if shared >= need {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// For each face, the indices of vertices lying on it.
    pub fn face_vertices(&self) -> Vec<Vec<usize>> {
        (0..self.num_faces())
            .map(|k| (0..self.vertices.len()).filter(|&v| self.vertex_rows[v].contains(&k)).collect())
            .collect()
    }
}

fn chebyshev_radius(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64, GeometryError> {
    // max t  s.t.  A c + ‖A_k‖ t ≤ b,  t ≤ 1 + ‖b‖∞
    let (r, l) = a.shape();
    let mut prob = QpProblem::new(l + 1);
    prob.q[l] = -1.0;
    prob.a_in = DMatrix::from_fn(r, l + 1, |i, j| if j < l { a[(i, j)] } else { a.row(i).norm() });
    prob.b_in = b.clone();
    prob.ub[l] = 1.0 + b.amax();
    let sol = solve_lp(&prob)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.x[l]),
        QpStatus::Infeasible => Ok(0.0),
        _ => Err(QpError::DimensionMismatch("inner-ball LP did not converge".into()).into()),
    }
}

fn check_bounded(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(), GeometryError> {
    let l = a.ncols();
    for i in 0..l {
        for sign in [1.0, -1.0] {
            let mut prob = QpProblem::new(l);
            prob.q[i] = -sign;
            prob.a_in = a.clone();
            prob.b_in = b.clone();
            let sol = solve_lp(&prob)?;
            if sol.status == QpStatus::Unbounded {
                return Err(GeometryError::Unbounded);
            }
        }
    }
    Ok(())
}

fn check_redundancy(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(), GeometryError> {
    let (r, l) = a.shape();
    for k in 0..r {
        let others: Vec<usize> = (0..r).filter(|&i| i != k).collect();
        let mut prob = QpProblem::new(l);
        prob.q = -a.row(k).transpose();
        prob.a_in = DMatrix::from_fn(r - 1, l, |i, j| a[(others[i], j)]);
        prob.b_in = DVector::from_iterator(r - 1, others.iter().map(|&i| b[i]));
        let sol = solve_lp(&prob)?;
        if sol.status == QpStatus::Optimal && -sol.objective <= b[k] + 1e-9 * (1.0 + b[k].abs()) {
            return Err(GeometryError::RedundantRow(k));
        }
    }
    Ok(())
}

type Vertices = (Vec<DVector<f64>>, Vec<Vec<usize>>);

fn enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vertices, GeometryError> {
    let (r, l) = a.shape();
    let mut verts: Vec<DVector<f64>> = Vec::new();
    let mut rows_at: Vec<Vec<usize>> = Vec::new();
    let mut combo: Vec<usize> = (0..l).collect();
    loop {
        let sub = DMatrix::from_fn(l, l, |i, j| a[(combo[i], j)]);
        let rhs = DVector::from_iterator(l, combo.iter().map(|&i| b[i]));
        let row_scale: f64 = combo.iter().map(|&i| a.row(i).norm()).product();
        if sub.determinant().abs() > 1e-10 * row_scale {
            if let Some(z) = sub.lu().solve(&rhs) {
                let resid = a * &z - b;
                let feasible = (0..r).all(|k| resid[k] <= VERTEX_FEAS_TOL * (1.0 + b[k].abs()));
                let dup = verts.iter().any(|v| (v - &z).amax() <= VERTEX_FEAS_TOL * (1.0 + z.amax()));
                if feasible && !dup {
                    let active: Vec<usize> =
                        (0..r).filter(|&k| resid[k].abs() <= VERTEX_ACTIVE_TOL * (1.0 + b[k].abs())).collect();
                    if active.len() > l {
                        return Err(GeometryError::DegenerateVertex(z.iter().copied().collect()));
                    }
                    verts.push(z);
                    rows_at.push(active);
                }
            }
        }
        if !next_combination(&mut combo, r) {
            break;
        }
    }
    Ok((verts, rows_at))
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Rigid pose: world point = R · body point + p.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub p: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl Pose {
    pub fn identity(l: usize) -> Self {
        Self { p: DVector::zeros(l), r: DMatrix::identity(l, l) }
    }

    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Self { p: DVector::from_vec(vec![x, y]), r: rot2(theta) }
    }

    pub fn spatial(p: Vector3<f64>, r: Matrix3<f64>) -> Result<Self, GeometryError> {
        let pose =
            Self { p: DVector::from_column_slice(p.as_slice()), r: DMatrix::from_column_slice(3, 3, r.as_slice()) };
        pose.validate()?;
        Ok(pose)
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let l = self.p.len();
        if self.r.shape() != (l, l) {
            return Err(GeometryError::Dimension("pose rotation shape".into()));
        }
        let err = (self.r.transpose() * &self.r - DMatrix::<f64>::identity(l, l)).amax();
        let det = self.r.determinant();
        if err > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::BadRotation);
        }
        Ok(())
    }
}

/// Placed face matrices `Ā = A Rᵀ`, `b̄ = b + A Rᵀ p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedHRep {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl PlacedHRep {
    pub fn num_faces(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HRepRates {
    pub a_dot: DMatrix<f64>,
    pub b_dot: DVector<f64>,
}

impl HRepRates {
    pub fn zeros(r: usize, l: usize) -> Self {
        Self { a_dot: DMatrix::zeros(r, l), b_dot: DVector::zeros(r) }
    }
}

pub fn place(poly: &Polytope, pose: &Pose) -> PlacedHRep {
    let a = poly.a() * pose.r.transpose();
    let b = poly.b() + &a * &pose.p;
    PlacedHRep { a, b }
}

/// Rotation rate for a planar scalar `ω` (`Ṙ = ω J R`) or a body-frame
/// 3-vector (`Ṙ = R hat(ω)`).
pub fn rotation_rate(r: &DMatrix<f64>, angvel: &[f64]) -> DMatrix<f64> {
    match r.nrows() {
        2 => {
            let w = angvel[0];
            let j = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
            j * r
        }
        _ => {
            let w = Vector3::new(angvel[0], angvel[1], angvel[2]);
            let h = hat(&w);
            r * DMatrix::from_column_slice(3, 3, h.as_slice())
        }
    }
}

/// Time derivatives of the placed face matrices for translational velocity
/// `vel` (world frame) and angular velocity `angvel`.
pub fn hrep_rates(poly: &Polytope, pose: &Pose, vel: &DVector<f64>, angvel: &[f64]) -> HRepRates {
    let r_dot = rotation_rate(&pose.r, angvel);
    let a_dot = poly.a() * r_dot.transpose();
    let abar = poly.a() * pose.r.transpose();
    let b_dot = &a_dot * &pose.p + abar * vel;
    HRepRates { a_dot, b_dot }
}

pub fn rot2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rodrigues' formula for `exp(hat(w))`.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Gram–Schmidt on the columns, keeping a right-handed frame.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let mut c1 = r.column(1) - c0 * c0.dot(&r.column(1));
    c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box() -> Polytope {
        Polytope::axis_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn box_is_valid_with_four_vertices() {
        let p = unit_box();
        assert_eq!(p.num_faces(), 4);
        assert_eq!(p.vertices().len(), 4);
        for v in p.vertices() {
            assert!((v[0].abs() - 1.0).abs() < 1e-12 && (v[1].abs() - 1.0).abs() < 1e-12);
        }
        assert!((p.inner_radius() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn triangle_vertices() {
        let p = Polytope::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]], &[0.0, 0.0, 1.0]).unwrap();
        let mut vs: Vec<(f64, f64)> = p.vertices().iter().map(|v| (v[0], v[1])).collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(vs, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(p.edges().len(), 3);
    }

    #[test]
    fn rejects_bad_polytopes() {
        let slab = Polytope::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]], &[1.0, 1.0, 2.0]);
        assert!(matches!(slab, Err(GeometryError::Unbounded)));

        let flat = Polytope::from_rows(
            &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            &[1.0, 1.0, 0.0, 0.0],
        );
        assert!(matches!(flat, Err(GeometryError::EmptyInterior)));

        let redundant = Polytope::from_rows(
            &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            &[1.0, 1.0, 1.0, 1.0, 5.0],
        );
        assert!(matches!(redundant, Err(GeometryError::RedundantRow(4))));

        // square pyramid: apex at (0,0,1) touches four side faces
        let pyramid = Polytope::from_rows(
            &[
                vec![1.0, 0.0, 1.0],
                vec![-1.0, 0.0, 1.0],
                vec![0.0, 1.0, 1.0],
                vec![0.0, -1.0, 1.0],
                vec![0.0, 0.0, -1.0],
            ],
            &[1.0, 1.0, 1.0, 1.0, 0.0],
        );
        assert!(matches!(pyramid, Err(GeometryError::DegenerateVertex(_))));
    }

    #[test]
    fn placement_examples() {
        let p = unit_box();
        let id = place(&p, &Pose::identity(2));
        assert_eq!(id.a, *p.a());
        assert_eq!(id.b, *p.b());

        let moved = place(&p, &Pose::planar(2.0, 0.0, 0.0));
        assert_eq!(moved.b.as_slice(), &[3.0, -1.0, 1.0, 1.0]);

        let turned = place(&p, &Pose::planar(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!((turned.a[(0, 0)]).abs() < 1e-15 && (turned.a[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn translation_rates() {
        let p = unit_box();
        let rates = hrep_rates(&p, &Pose::identity(2), &DVector::from_vec(vec![1.0, 0.0]), &[0.0]);
        assert_eq!(rates.a_dot, DMatrix::zeros(4, 2));
        assert_eq!(rates.b_dot.as_slice(), &[1.0, -1.0, 0.0, 0.0]);
        let still = hrep_rates(&p, &Pose::planar(0.3, 0.2, 1.0), &DVector::zeros(2), &[0.0]);
        assert_eq!(still, HRepRates::zeros(4, 2));
    }

    fn cube() -> Polytope {
        Polytope::axis_box(&[-0.5, -0.3, -0.2], &[0.4, 0.6, 0.7]).unwrap()
    }

    #[test]
    fn spatial_rates_match_finite_differences() {
        let poly = cube();
        let r0 = exp_so3(&Vector3::new(0.3, -0.2, 0.5));
        let p0 = Vector3::new(0.4, -1.0, 2.0);
        let v = Vector3::new(0.7, 0.1, -0.3);
        let w = Vector3::new(-0.4, 0.9, 0.2);
        let pose_at = |t: f64| {
            let r = r0 * exp_so3(&(w * t));
            Pose::spatial(p0 + v * t, r).unwrap()
        };
        let dt = 1e-6;
        let plus = place(&poly, &pose_at(dt));
        let minus = place(&poly, &pose_at(-dt));
        let fd_a = (plus.a - minus.a) / (2.0 * dt);
        let fd_b = (plus.b - minus.b) / (2.0 * dt);
        let rates = hrep_rates(&poly, &pose_at(0.0), &DVector::from_column_slice(v.as_slice()), w.as_slice());
        assert!((fd_a - &rates.a_dot).amax() < 1e-6);
        assert!((fd_b - &rates.b_dot).amax() < 1e-6);

        // λ Ȧ = ωᵀ hat(Aᵀλᵀ) Rᵀ
        let lam = DVector::from_vec(vec![0.3, 0.0, 1.2, 0.5, 0.0, 0.1]);
        let lhs = lam.transpose() * &rates.a_dot;
        let at_l = poly.a().tr_mul(&lam);
        let h = hat(&Vector3::new(at_l[0], at_l[1], at_l[2]));
        let rhs = w.transpose() * h * r0.transpose();
        for k in 0..3 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn planar_rates_match_finite_differences() {
        let poly = unit_box();
        let (x, y, th, vx, vy, w) = (0.3, -0.7, 0.4, 0.2, -0.5, 0.8);
        let at = |t: f64| place(&poly, &Pose::planar(x + vx * t, y + vy * t, th + w * t));
        let dt = 1e-6;
        let fd_a = (at(dt).a - at(-dt).a) / (2.0 * dt);
        let fd_b = (at(dt).b - at(-dt).b) / (2.0 * dt);
        let rates = hrep_rates(&poly, &Pose::planar(x, y, th), &DVector::from_vec(vec![vx, vy]), &[w]);
        assert!((fd_a - rates.a_dot).amax() < 1e-6);
        assert!((fd_b - rates.b_dot).amax() < 1e-6);
    }

    #[test]
    fn hat_examples() {
        let e1 = Vector3::x();
        assert_eq!(hat(&e1) * Vector3::y(), Vector3::z());
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expect).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(v in prop::array::uniform3(-10.0f64..10.0), w in prop::array::uniform3(-10.0f64..10.0)) {
            let v = Vector3::from(v);
            let w = Vector3::from(w);
            let direct = Vector3::new(v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0]);
            prop_assert!((hat(&v) * w - direct).amax() <= 1e-15 * (1.0 + direct.amax()) * 4.0);
            prop_assert!((hat(&v) * w + hat(&w) * v).amax() <= 1e-13);
            prop_assert_eq!(hat(&v).transpose(), -hat(&v));
        }

        #[test]
        fn orthonormalize_keeps_group(w in prop::array::uniform3(-3.0f64..3.0), noise in prop::array::uniform3(-1e-6f64..1e-6)) {
            let mut r = exp_so3(&Vector3::from(w));
            r[(0, 1)] += noise[0];
            r[(2, 0)] += noise[1];
            r[(1, 2)] += noise[2];
            let q = orthonormalize(&r);
            prop_assert!((q.transpose() * q - Matrix3::identity()).amax() <= 1e-12);
            prop_assert!((q.determinant() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn random_polygon_vertices_reproduce_membership(angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 3..9), radius in 0.5f64..3.0) {
            let mut angles = angles;
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            angles.dedup_by(|a, b| (*a - *b).abs() < 0.05);
            // tangent lines to a circle; keep only spreads that close the polygon
            let gaps_ok = angles.windows(2).all(|w| w[1] - w[0] < 3.0)
                && (angles[0] + std::f64::consts::TAU - angles[angles.len() - 1]) < 3.0;
            prop_assume!(angles.len() >= 3 && gaps_ok);
            let rows: Vec<Vec<f64>> = angles.iter().map(|t| vec![t.cos(), t.sin()]).collect();
            let b = vec![radius; rows.len()];
            let poly = Polytope::from_rows(&rows, &b).unwrap();
            prop_assert_eq!(poly.vertices().len(), rows.len());
            for v in poly.vertices() {
                prop_assert!(poly.contains(v, 1e-9));
            }
            // centroid of vertices is inside; points beyond a vertex are not
            let c = poly.vertices().iter().fold(DVector::zeros(2), |acc, v| acc + v) / rows.len() as f64;
            prop_assert!(poly.contains(&c, 0.0));
            for v in poly.vertices() {
                let out = &c + (v - &c) * 1.01;
                prop_assert!(!poly.contains(&out, 0.0));
            }
        }
    }
}
