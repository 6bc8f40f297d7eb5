//! Brute-force reference computations. Nothing here calls the QP solver, so
//! agreement with the optimization path is an independent check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{place, PlacedHRep, Polytope, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    EdgePairs2D,
    FeaturePairs3D,
    SampledSweep,
    FiniteDiff,
    VertexEnum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub value: f64,
    pub method: OracleMethod,
    pub samples: usize,
}

const FEAS_TOL: f64 = 1e-9;

/// Vertices of a placed H-rep by intersecting every `l`-subset of rows, with
/// the rows active at each vertex.
pub fn placed_vertices(p: &PlacedHRep) -> (Vec<DVector<f64>>, Vec<Vec<usize>>) {
    let (r, l) = (p.num_faces(), p.dim());
    let mut verts: Vec<DVector<f64>> = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut combo: Vec<usize> = (0..l).collect();
    loop {
        let sub = DMatrix::from_fn(l, l, |i, j| p.a[(combo[i], j)]);
        let rhs = DVector::from_iterator(l, combo.iter().map(|&i| p.b[i]));
        if sub.determinant().abs() > 1e-12 {
            if let Some(z) = sub.lu().solve(&rhs) {
                let resid = &p.a * &z - &p.b;
                let tol = |k: usize| FEAS_TOL * (1.0 + p.b[k].abs());
                if (0..r).all(|k| resid[k] <= tol(k))
                    && !verts.iter().any(|v| (v - &z).amax() <= 1e-9 * (1.0 + z.amax()))
                {
                    rows.push((0..r).filter(|&k| resid[k].abs() <= 1e-7 * (1.0 + p.b[k].abs())).collect());
                    verts.push(z);
                }
            }
        }
        let mut i = l;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if combo[i] < r - l + i {
                combo[i] += 1;
                for j in i + 1..l {
                    combo[j] = combo[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    (verts, rows)
}

fn edges(rows: &[Vec<usize>], l: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i].iter().filter(|k| rows[j].contains(k)).count() >= l - 1 {
                out.push((i, j));
            }
        }
    }
    out
}

fn inside(p: &PlacedHRep, z: &DVector<f64>, tol: f64) -> bool {
    let r = &p.a * z - &p.b;
    r.iter().all(|&v| v <= tol)
}

/// Closest points between segments `[p1, q1]` and `[p2, q2]`; returns the
/// squared distance.
pub fn segment_distance_sq(p1: &DVector<f64>, q1: &DVector<f64>, p2: &DVector<f64>, q2: &DVector<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm_squared();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

fn segments_cross_2d(p1: &DVector<f64>, q1: &DVector<f64>, p2: &DVector<f64>, q2: &DVector<f64>) -> bool {
    let orient = |a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let o1 = orient(p1, q1, p2);
    let o2 = orient(p1, q1, q2);
    let o3 = orient(p2, q2, p1);
    let o4 = orient(p2, q2, q1);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Squared distance between two planar convex polygons from all
/// boundary-segment pairs; zero when they overlap.
pub fn polygon_distance_2d(pi: &PlacedHRep, pj: &PlacedHRep) -> OracleReport {
    let (vi, ri) = placed_vertices(pi);
    let (vj, rj) = placed_vertices(pj);
    let ei = edges(&ri, 2);
    let ej = edges(&rj, 2);
    let report = |value, samples| OracleReport { value, method: OracleMethod::EdgePairs2D, samples };
    if vi.iter().any(|v| inside(pj, v, 0.0)) || vj.iter().any(|v| inside(pi, v, 0.0)) {
        return report(0.0, 0);
    }
    let mut best = f64::INFINITY;
    let mut count = 0;
    for &(a, b) in &ei {
        for &(c, d) in &ej {
            count += 1;
            if segments_cross_2d(&vi[a], &vi[b], &vj[c], &vj[d]) {
                return report(0.0, count);
            }
            best = best.min(segment_distance_sq(&vi[a], &vi[b], &vj[c], &vj[d]));
        }
    }
    report(best, count)
}

/// Squared distance between two convex polyhedra from vertex–face and
/// edge–edge feature pairs; zero when they intersect.
pub fn polyhedron_distance_3d(pi: &PlacedHRep, pj: &PlacedHRep) -> OracleReport {
    let (vi, ri) = placed_vertices(pi);
    let (vj, rj) = placed_vertices(pj);
    let ei = edges(&ri, 3);
    let ej = edges(&rj, 3);
    let report = |value, samples| OracleReport { value, method: OracleMethod::FeaturePairs3D, samples };
    if vi.iter().any(|v| inside(pj, v, 0.0)) || vj.iter().any(|v| inside(pi, v, 0.0)) {
        return report(0.0, 0);
    }
    if edges_pierce(&vi, &ei, pj) || edges_pierce(&vj, &ej, pi) {
        return report(0.0, 0);
    }
    let mut best = f64::INFINITY;
    let mut count = 0;
    for &(a, b) in &ei {
        for &(c, d) in &ej {
            count += 1;
            best = best.min(segment_distance_sq(&vi[a], &vi[b], &vj[c], &vj[d]));
        }
    }
    for (verts, other) in [(&vi, pj), (&vj, pi)] {
        for v in verts.iter() {
            for k in 0..other.num_faces() {
                count += 1;
                let n = other.a.row(k).transpose();
                let nn = n.norm_squared();
                let off = (n.dot(v) - other.b[k]) / nn;
                if off <= 0.0 {
                    continue;
                }
                let proj = v - &n * off;
                if inside(other, &proj, 1e-12 * (1.0 + other.b.amax())) {
                    best = best.min(off * off * nn);
                }
            }
        }
    }
    report(best, count)
}

fn edges_pierce(verts: &[DVector<f64>], edges: &[(usize, usize)], other: &PlacedHRep) -> bool {
    for &(a, b) in edges {
        let (p, q) = (&verts[a], &verts[b]);
        for k in 0..other.num_faces() {
            let n = other.a.row(k).transpose();
            let fp = n.dot(p) - other.b[k];
            let fq = n.dot(q) - other.b[k];
            if fp * fq < 0.0 {
                let t = fp / (fp - fq);
                let x = p + (q - p) * t;
                if inside(other, &x, 1e-12 * (1.0 + other.b.amax())) {
                    return true;
                }
            }
        }
    }
    false
}

/// Dimension-dispatching static distance oracle.
pub fn static_distance(pi: &PlacedHRep, pj: &PlacedHRep) -> OracleReport {
    if pi.dim() == 2 {
        polygon_distance_2d(pi, pj)
    } else {
        polyhedron_distance_3d(pi, pj)
    }
}

/// Body kinematics for the sweep oracle.
#[derive(Debug, Clone)]
pub struct SweepBody<'a> {
    pub poly: &'a Polytope,
    pub pose: Pose,
    pub v: DVector<f64>,
}

/// Minimum over `τ ∈ {0, T/n, …, T}` of the pair distance while both bodies
/// brake uniformly to rest at `T` with rotations frozen.
pub fn sampled_sweep_min(bi: &SweepBody, bj: &SweepBody, tm: f64, n: usize) -> OracleReport {
    let n = n.max(1);
    let at = |b: &SweepBody, tau: f64| {
        let s = tau - tau * tau / (2.0 * tm);
        let pose = Pose { p: &b.pose.p + &b.v * s, r: b.pose.r.clone() };
        place(b.poly, &pose)
    };
    let mut best = f64::INFINITY;
    for k in 0..=n {
        let tau = tm * k as f64 / n as f64;
        let d = static_distance(&at(bi, tau), &at(bj, tau)).value;
        best = best.min(d);
        if best == 0.0 {
            break;
        }
    }
    OracleReport { value: best, method: OracleMethod::SampledSweep, samples: n + 1 }
}

/// Central difference of `h` at `t`. The sampler returns `h` and a signature
/// of the active sets; if the signature changes within `±5 dt` the estimate is
/// refused.
pub fn finite_diff_hdot<S, F>(mut sampler: F, t: f64, dt: f64) -> Result<OracleReport>
where
    S: PartialEq,
    F: FnMut(f64) -> (f64, S),
{
    let (_, sig0) = sampler(t);
    let mut plus = 0.0;
    let mut minus = 0.0;
    for k in -5i32..=5 {
        if k == 0 {
            continue;
        }
        let (h, sig) = sampler(t + k as f64 * dt);
        if sig != sig0 {
            return Err(Error::SwitchNearby);
        }
        if k == 1 {
            plus = h;
        } else if k == -1 {
            minus = h;
        }
    }
    Ok(OracleReport { value: (plus - minus) / (2.0 * dt), method: OracleMethod::FiniteDiff, samples: 11 })
}

/// Number of vertices and the largest count of active rows at any vertex.
pub fn vertex_activity(p: &PlacedHRep) -> OracleReport {
    let (_, rows) = placed_vertices(p);
    let worst = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    OracleReport { value: worst as f64, method: OracleMethod::VertexEnum, samples: rows.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn placed_box(lo: &[f64], hi: &[f64]) -> PlacedHRep {
        place(&Polytope::axis_box(lo, hi).unwrap(), &Pose::identity(lo.len()))
    }

    #[test]
    fn boxes_2d() {
        let a = placed_box(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(polygon_distance_2d(&a, &placed_box(&[2.0, 0.0], &[3.0, 1.0])).value, 1.0);
        assert_eq!(polygon_distance_2d(&a, &placed_box(&[0.5, 0.5], &[2.0, 2.0])).value, 0.0);
        assert_eq!(polygon_distance_2d(&a, &placed_box(&[2.0, 2.0], &[3.0, 3.0])).value, 2.0);
        // crossing bars with no vertex inside the other
        let h = placed_box(&[-1.0, 0.4], &[2.0, 0.6]);
        assert_eq!(polygon_distance_2d(&a, &h).value, 0.0);
    }

    #[test]
    fn boxes_3d() {
        let a = placed_box(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        let b = placed_box(&[1.5, 0.2, 0.2], &[2.0, 0.8, 0.8]);
        assert!((polyhedron_distance_3d(&a, &b).value - 0.25).abs() < 1e-15);
        let c = placed_box(&[2.0, 2.0, 3.0], &[3.0, 3.0, 4.0]);
        assert!((polyhedron_distance_3d(&a, &c).value - 6.0).abs() < 1e-12);
        // a bar passing through the cube without any vertex inside
        let bar = placed_box(&[-1.0, 0.4, 0.4], &[2.0, 0.6, 0.6]);
        assert_eq!(polyhedron_distance_3d(&a, &bar).value, 0.0);
    }

    #[test]
    fn static_sweep_equals_static_distance() {
        let p = Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let bi = SweepBody { poly: &p, pose: Pose::identity(2), v: DVector::zeros(2) };
        let bj = SweepBody { poly: &p, pose: Pose::planar(2.0, 0.0, 0.0), v: DVector::zeros(2) };
        assert_eq!(sampled_sweep_min(&bi, &bj, 4.0, 100).value, 1.0);
        let away = SweepBody { v: DVector::from_vec(vec![1.0, 0.0]), ..bj.clone() };
        assert_eq!(sampled_sweep_min(&bi, &away, 4.0, 100).value, 1.0);
        let toward = SweepBody { v: DVector::from_vec(vec![-1.0, 0.0]), ..bj };
        assert_eq!(sampled_sweep_min(&bi, &toward, 4.0, 100).value, 0.0);
    }

    #[test]
    fn finite_difference_of_closing_gap() {
        let a = placed_box(&[0.0, 0.0], &[1.0, 1.0]);
        let sampler = |t: f64| {
            let b = placed_box(&[2.0 - t, 0.0], &[3.0 - t, 1.0]);
            (polygon_distance_2d(&a, &b).value, ())
        };
        let r = finite_diff_hdot(sampler, 0.0, 1e-5).unwrap();
        assert!((r.value + 2.0).abs() < 1e-3);
        let still = finite_diff_hdot(|_| (1.0, ()), 0.0, 1e-5).unwrap();
        assert_eq!(still.value, 0.0);
        let switching = finite_diff_hdot(|t| (1.0, t > 2e-5), 0.0, 1e-5);
        assert!(matches!(switching, Err(Error::SwitchNearby)));
    }

    #[test]
    fn segment_distance_cases() {
        let v = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
        assert_eq!(segment_distance_sq(&v(0.0, 0.0), &v(1.0, 0.0), &v(0.0, 1.0), &v(1.0, 1.0)), 1.0);
        assert_eq!(segment_distance_sq(&v(0.0, 0.0), &v(1.0, 0.0), &v(2.0, 0.0), &v(3.0, 0.0)), 1.0);
        assert_eq!(segment_distance_sq(&v(0.0, 0.0), &v(0.0, 0.0), &v(3.0, 4.0), &v(3.0, 4.0)), 25.0);
    }
}
