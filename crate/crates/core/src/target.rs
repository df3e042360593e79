//! Embedded targets `N ⊂ R^q` with closed-form nearest-point projection,
//! its first two derivatives, geodesics, parallel transport, curvature and
//! Kähler data.
//!
//! Supported targets are the unit spheres `S^{q-1} ⊂ R^q` for `q ∈ {2,3,4}`
//! and the Clifford tori `S^1(r1) × S^1(r2) ⊂ R^4`. All tensors are returned
//! in ambient coordinates.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const POINT_TOL: f64 = 1e-10;
const CUT_TOL: f64 = 1e-9;
/// Minimum distance from the frame axis line for the sphere `S^2` frame.
const FRAME_AXIS_CLEARANCE: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    UnitSphere { q: usize },
    CliffordTorus { r1: f64, r2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComplexStructure {
    /// `i_p X = p × X` on `S^2`.
    CrossProduct,
    /// Quarter rotation mixing the two circle factors: `i t1 = t2`.
    ProductRotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealStructure {
    /// `j2 t1 = t1`, `j2 t2 = -t2`.
    ProductReflection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Kaehler {
    pub complex: ComplexStructure,
    pub real: Option<RealStructure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedTarget {
    pub kind: TargetKind,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub tube_radius: f64,
    pub weingarten_bound: f64,
    pub injectivity_radius: f64,
    /// Transport radius, strictly below half the injectivity radius.
    pub epsilon: f64,
    pub kaehler: Option<Kaehler>,
    frame_axis: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetPoint {
    coords: DVector<f64>,
}

impl TargetPoint {
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: TargetPoint,
    pub vec: DVector<f64>,
}

impl EmbeddedTarget {
    pub fn sphere(q: usize) -> Result<Self> {
        if !(2..=4).contains(&q) {
            return Err(Error::InvalidInput(format!("sphere ambient dimension {q} not in 2..=4")));
        }
        let kaehler = (q == 3).then_some(Kaehler { complex: ComplexStructure::CrossProduct, real: None });
        Ok(EmbeddedTarget {
            kind: TargetKind::UnitSphere { q },
            intrinsic_dim: q - 1,
            ambient_dim: q,
            tube_radius: 0.4,
            weingarten_bound: 1.0,
            injectivity_radius: PI,
            epsilon: 0.45 * PI,
            kaehler,
            frame_axis: [0.0, 0.0, 1.0],
        })
    }

    pub fn clifford_torus(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
            return Err(Error::InvalidInput(format!("radii must be positive, got {r1}, {r2}")));
        }
        let rmin = r1.min(r2);
        Ok(EmbeddedTarget {
            kind: TargetKind::CliffordTorus { r1, r2 },
            intrinsic_dim: 2,
            ambient_dim: 4,
            tube_radius: 0.3 * rmin,
            weingarten_bound: 1.0 / rmin,
            injectivity_radius: PI * rmin,
            epsilon: 0.45 * PI * rmin,
            kaehler: Some(Kaehler {
                complex: ComplexStructure::ProductRotation,
                real: Some(RealStructure::ProductReflection),
            }),
            frame_axis: [0.0; 3],
        })
    }

    pub fn with_tube_radius(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta * self.weingarten_bound < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tube radius {delta} must lie in (0, 1/C) with C = {}",
                self.weingarten_bound
            )));
        }
        self.tube_radius = delta;
        Ok(self)
    }

    /// Axis used to build the tangent frame of `S^2`; frames are singular
    /// on the line through the axis.
    pub fn with_frame_axis(mut self, axis: [f64; 3]) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0) {
            return Err(Error::InvalidInput("frame axis must be nonzero".into()));
        }
        self.frame_axis = [axis[0] / n, axis[1] / n, axis[2] / n];
        Ok(self)
    }

    pub fn frame_axis(&self) -> [f64; 3] {
        self.frame_axis
    }

    pub fn has_real_structure(&self) -> bool {
        matches!(self.kaehler, Some(Kaehler { real: Some(_), .. }))
    }

    fn radii(&self) -> [f64; 2] {
        match self.kind {
            TargetKind::CliffordTorus { r1, r2 } => [r1, r2],
            TargetKind::UnitSphere { .. } => [1.0, 1.0],
        }
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.ambient_dim {
            return Err(Error::InvalidInput(format!(
                "expected {} ambient coordinates, got {}",
                self.ambient_dim,
                z.len()
            )));
        }
        Ok(())
    }

    /// Euclidean distance from `z` to the target.
    pub fn distance_to_target(&self, z: &[f64]) -> f64 {
        match self.kind {
            TargetKind::UnitSphere { .. } => (norm(z) - 1.0).abs(),
            TargetKind::CliffordTorus { r1, r2 } => {
                let a = norm(&z[0..2]) - r1;
                let b = norm(&z[2..4]) - r2;
                (a * a + b * b).sqrt()
            }
        }
    }

    fn check_tube(&self, z: &[f64]) -> Result<()> {
        self.check_len(z)?;
        match self.kind {
            TargetKind::UnitSphere { .. } => {
                if !(norm(z) > 1e-12) {
                    return Err(Error::OutsideTube { distance: 1.0, tube: self.tube_radius });
                }
            }
            TargetKind::CliffordTorus { .. } => {
                let d = self.distance_to_target(z);
                if !(d <= self.tube_radius) || norm(&z[0..2]) == 0.0 || norm(&z[2..4]) == 0.0 {
                    return Err(Error::OutsideTube { distance: d, tube: self.tube_radius });
                }
            }
        }
        Ok(())
    }

    /// Nearest-point projection into a caller buffer.
    pub fn project_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_tube(z)?;
        match self.kind {
            TargetKind::UnitSphere { .. } => {
                let n = norm(z);
                for (o, x) in out.iter_mut().zip(z) {
                    *o = x / n;
                }
            }
            TargetKind::CliffordTorus { r1, r2 } => {
                for (b, r) in [r1, r2].into_iter().enumerate() {
                    let n = norm(&z[2 * b..2 * b + 2]);
                    out[2 * b] = r * z[2 * b] / n;
                    out[2 * b + 1] = r * z[2 * b + 1] / n;
                }
            }
        }
        Ok(())
    }

    pub fn project(&self, z: &[f64]) -> Result<TargetPoint> {
        let mut out = vec![0.0; self.ambient_dim];
        self.project_into(z, &mut out)?;
        Ok(TargetPoint { coords: DVector::from_vec(out) })
    }

    /// Validates that `coords` lies on the target.
    pub fn point(&self, coords: &[f64]) -> Result<TargetPoint> {
        let p = self.project(coords)?;
        let res = (p.coords.clone() - DVector::from_column_slice(coords)).norm();
        if res > POINT_TOL {
            return Err(Error::InvalidInput(format!("point off target by {res:.3e}")));
        }
        Ok(TargetPoint { coords: DVector::from_column_slice(coords) })
    }

    /// Validates tangency of `vec` at `base`.
    pub fn tangent(&self, base: &TargetPoint, vec: &[f64]) -> Result<TangentVector> {
        let v = DVector::from_column_slice(vec);
        let res = (self.tangent_projector(base) * &v - &v).norm();
        if res > POINT_TOL {
            return Err(Error::TangencyViolation { residual: res, limit: POINT_TOL });
        }
        Ok(TangentVector { base: base.clone(), vec: v })
    }

    /// Row-major `q×q` Jacobian of the projection at `z`.
    pub fn proj_jacobian_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_tube(z)?;
        let q = self.ambient_dim;
        out.iter_mut().for_each(|x| *x = 0.0);
        match self.kind {
            TargetKind::UnitSphere { .. } => {
                let n = norm(z);
                for a in 0..q {
                    for b in 0..q {
                        let d = if a == b { 1.0 } else { 0.0 };
                        out[a * q + b] = (d - z[a] * z[b] / (n * n)) / n;
                    }
                }
            }
            TargetKind::CliffordTorus { r1, r2 } => {
                for (blk, r) in [r1, r2].into_iter().enumerate() {
                    let o = 2 * blk;
                    let n = norm(&z[o..o + 2]);
                    for a in 0..2 {
                        for b in 0..2 {
                            let d = if a == b { 1.0 } else { 0.0 };
                            out[(o + a) * q + o + b] = r * (d - z[o + a] * z[o + b] / (n * n)) / n;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn proj_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.ambient_dim;
        let mut out = vec![0.0; q * q];
        self.proj_jacobian_into(z, &mut out)?;
        Ok(DMatrix::from_row_slice(q, q, &out))
    }

    /// Second derivatives `H[(a*q + b)*q + c] = ∂_b ∂_c π^a` at `z`.
    pub fn proj_hessian_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_tube(z)?;
        let q = self.ambient_dim;
        out.iter_mut().for_each(|x| *x = 0.0);
        let block = |o: usize, m: usize, r: f64, out: &mut [f64]| {
            let n = norm(&z[o..o + m]);
            let s = r / (n * n);
            let h: Vec<f64> = z[o..o + m].iter().map(|x| x / n).collect();
            for a in 0..m {
                for b in 0..m {
                    for c in b..m {
                        let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
                        let v = -d(a, b) * h[c] - d(a, c) * h[b] - d(b, c) * h[a] + 3.0 * h[a] * h[b] * h[c];
                        out[((o + a) * q + o + b) * q + o + c] = s * v;
                        out[((o + a) * q + o + c) * q + o + b] = s * v;
                    }
                }
            }
        };
        match self.kind {
            TargetKind::UnitSphere { .. } => block(0, q, 1.0, out),
            TargetKind::CliffordTorus { r1, r2 } => {
                block(0, 2, r1, out);
                block(2, 2, r2, out);
            }
        }
        Ok(())
    }

    /// Hessian as one `q×q` matrix per output component `a`.
    pub fn proj_hessian(&self, z: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let q = self.ambient_dim;
        let mut out = vec![0.0; q * q * q];
        self.proj_hessian_into(z, &mut out)?;
        Ok((0..q).map(|a| DMatrix::from_row_slice(q, q, &out[a * q * q..(a + 1) * q * q])).collect())
    }

    pub fn tangent_projector(&self, p: &TargetPoint) -> DMatrix<f64> {
        self.proj_jacobian(p.coords.as_slice()).expect("target points lie in the tube")
    }

    /// Second fundamental form `II(X, Y)` at `p` (normal-valued).
    pub fn second_fundamental_form(&self, p: &TargetPoint, x: &[f64], y: &[f64]) -> DVector<f64> {
        let h = self.proj_hessian(p.coords.as_slice()).expect("target points lie in the tube");
        DVector::from_fn(self.ambient_dim, |a, _| {
            let xv = DVector::from_column_slice(x);
            let yv = DVector::from_column_slice(y);
            (xv.transpose() * &h[a] * yv)[(0, 0)]
        })
    }

    pub fn geodesic_distance(&self, p: &TargetPoint, q: &TargetPoint) -> f64 {
        dist_slices(self, p.coords.as_slice(), q.coords.as_slice())
    }

    fn check_cut(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let d = dist_slices(self, p, q);
        if d >= self.injectivity_radius - CUT_TOL {
            return Err(Error::CutLocus { distance: d, injectivity: self.injectivity_radius });
        }
        Ok(d)
    }

    /// Point at parameter `t` on the shortest geodesic from `p` to `q`.
    pub fn geodesic(&self, p: &TargetPoint, q: &TargetPoint, t: f64) -> Result<TargetPoint> {
        let mut out = vec![0.0; self.ambient_dim];
        self.geodesic_into(p.coords.as_slice(), q.coords.as_slice(), t, &mut out)?;
        Ok(TargetPoint { coords: DVector::from_vec(out) })
    }

    pub fn geodesic_into(&self, p: &[f64], q: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.check_cut(p, q)?;
        match self.kind {
            TargetKind::UnitSphere { .. } => {
                if d < 1e-300 {
                    out.copy_from_slice(p);
                    return Ok(());
                }
                let (a, b) = (((1.0 - t) * d).sin() / d.sin(), (t * d).sin() / d.sin());
                for i in 0..p.len() {
                    out[i] = a * p[i] + b * q[i];
                }
                let n = norm(out);
                out.iter_mut().for_each(|x| *x /= n);
            }
            TargetKind::CliffordTorus { .. } => {
                for (b, r) in self.radii().into_iter().enumerate() {
                    let phi = block_angle(p, b) + t * block_angle_diff(p, q, b);
                    out[2 * b] = r * phi.cos();
                    out[2 * b + 1] = r * phi.sin();
                }
            }
        }
        Ok(())
    }

    /// Inverse exponential map: the initial velocity of the geodesic to `q`.
    pub fn log_map(&self, p: &TargetPoint, q: &TargetPoint) -> Result<TangentVector> {
        let (ps, qs) = (p.coords.as_slice(), q.coords.as_slice());
        let d = self.check_cut(ps, qs)?;
        let v = match self.kind {
            TargetKind::UnitSphere { .. } => {
                let pq = dot(ps, qs);
                let w: Vec<f64> = ps.iter().zip(qs).map(|(a, b)| b - pq * a).collect();
                let wn = norm(&w);
                if wn < 1e-300 {
                    DVector::zeros(self.ambient_dim)
                } else {
                    DVector::from_iterator(w.len(), w.iter().map(|x| d * x / wn))
                }
            }
            TargetKind::CliffordTorus { .. } => {
                let mut v = DVector::zeros(4);
                for (b, r) in self.radii().into_iter().enumerate() {
                    let dphi = block_angle_diff(ps, qs, b);
                    let phi = block_angle(ps, b);
                    v[2 * b] = -r * dphi * phi.sin();
                    v[2 * b + 1] = r * dphi * phi.cos();
                }
                v
            }
        };
        Ok(TangentVector { base: p.clone(), vec: v })
    }

    /// Orthogonal ambient matrix restricting to parallel transport
    /// `T_pN → T_qN` along the shortest geodesic (row-major `q×q`).
    pub fn transport_matrix_into(&self, p: &[f64], q: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.check_cut(p, q)?;
        let n = self.ambient_dim;
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            out[i * n + i] = 1.0;
        }
        match self.kind {
            TargetKind::UnitSphere { .. } => {
                let pq = dot(p, q);
                let w: Vec<f64> = p.iter().zip(q).map(|(a, b)| b - pq * a).collect();
                let wn = norm(&w);
                if wn < 1e-300 {
                    return Ok(());
                }
                let w: Vec<f64> = w.iter().map(|x| x / wn).collect();
                let (c, s) = (d.cos(), d.sin());
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] +=
                            (c - 1.0) * (p[i] * p[j] + w[i] * w[j]) + s * (w[i] * p[j] - p[i] * w[j]);
                    }
                }
            }
            TargetKind::CliffordTorus { .. } => {
                for b in 0..2 {
                    let a = block_angle_diff(p, q, b);
                    let (c, s) = (a.cos(), a.sin());
                    let o = 2 * b;
                    out[o * n + o] = c;
                    out[o * n + o + 1] = -s;
                    out[(o + 1) * n + o] = s;
                    out[(o + 1) * n + o + 1] = c;
                }
            }
        }
        Ok(())
    }

    pub fn parallel_transport_tangent(&self, p: &TargetPoint, q: &TargetPoint, x: &TangentVector) -> Result<TangentVector> {
        let n = self.ambient_dim;
        let mut m = vec![0.0; n * n];
        self.transport_matrix_into(p.coords.as_slice(), q.coords.as_slice(), &mut m)?;
        let v = DMatrix::from_row_slice(n, n, &m) * &x.vec;
        Ok(TangentVector { base: q.clone(), vec: v })
    }

    /// `R(X,Y)Z` of the induced metric.
    pub fn riemann_curvature(&self, x: &TangentVector, y: &TangentVector, z: &TangentVector) -> TangentVector {
        let v = match self.kind {
            TargetKind::UnitSphere { .. } => &x.vec * y.vec.dot(&z.vec) - &y.vec * x.vec.dot(&z.vec),
            TargetKind::CliffordTorus { .. } => DVector::zeros(self.ambient_dim),
        };
        TangentVector { base: x.base.clone(), vec: v }
    }

    /// Ambient matrix of the complex structure at `p` (zero on normals).
    pub fn complex_structure_matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        match (self.kind, self.kaehler) {
            (TargetKind::UnitSphere { q: 3 }, Some(_)) => Ok(DMatrix::from_row_slice(
                3,
                3,
                &[0.0, -p[2], p[1], p[2], 0.0, -p[0], -p[1], p[0], 0.0],
            )),
            (TargetKind::CliffordTorus { .. }, Some(_)) => {
                let (t1, t2) = self.torus_tangents(p);
                Ok(&t2 * t1.transpose() - &t1 * t2.transpose())
            }
            _ => Err(Error::StructureUnavailable("complex structure")),
        }
    }

    /// Ambient matrix of the parallel real structure at `p` (zero on normals).
    pub fn real_structure_matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        if !self.has_real_structure() {
            return Err(Error::StructureUnavailable("real structure"));
        }
        let (t1, t2) = self.torus_tangents(p);
        Ok(&t1 * t1.transpose() - &t2 * t2.transpose())
    }

    pub fn complex_structure(&self, x: &TangentVector) -> Result<TangentVector> {
        let m = self.complex_structure_matrix(x.base.coords.as_slice())?;
        Ok(TangentVector { base: x.base.clone(), vec: m * &x.vec })
    }

    pub fn real_structure(&self, x: &TangentVector) -> Result<TangentVector> {
        let m = self.real_structure_matrix(x.base.coords.as_slice())?;
        Ok(TangentVector { base: x.base.clone(), vec: m * &x.vec })
    }

    fn torus_tangents(&self, p: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let [r1, r2] = self.radii();
        (
            DVector::from_vec(vec![-p[1] / r1, p[0] / r1, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, -p[3] / r2, p[2] / r2]),
        )
    }

    /// Orthonormal tangent frame at `p`, row-major `q×n` (`out[A*n + a]`).
    /// On Kähler targets the frame is complex-adapted (`E_2 = i E_1`), and
    /// on the Clifford torus it also diagonalizes the real structure.
    pub fn frame_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            TargetKind::UnitSphere { q: 2 } => {
                out[0] = -p[1];
                out[1] = p[0];
            }
            TargetKind::UnitSphere { q: 3 } => {
                let (e1, e2, _) = self.sphere2_frame(p)?;
                for a in 0..3 {
                    out[a * 2] = e1[a];
                    out[a * 2 + 1] = e2[a];
                }
            }
            TargetKind::UnitSphere { .. } => {
                for k in 0..3 {
                    let e = quat_right_unit(p, k);
                    for a in 0..4 {
                        out[a * 3 + k] = e[a];
                    }
                }
            }
            TargetKind::CliffordTorus { r1, r2 } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                out[0] = -p[1] / r1;
                out[2] = p[0] / r1;
                out[4 + 1] = -p[3] / r2;
                out[6 + 1] = p[2] / r2;
            }
        }
        Ok(())
    }

    /// Directional derivative of the frame field at `p` along the tangent
    /// vector `x`, same layout as [`Self::frame_into`].
    pub fn frame_differential_into(&self, p: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            TargetKind::UnitSphere { q: 2 } => {
                out[0] = -x[1];
                out[1] = x[0];
            }
            TargetKind::UnitSphere { q: 3 } => {
                let (e1, _, wn) = self.sphere2_frame(p)?;
                let a = self.frame_axis;
                let ap = dot(&a, p);
                let ax = dot(&a, x);
                let dw: Vec<f64> = (0..3).map(|i| -ax * p[i] - ap * x[i]).collect();
                let e1dw = dot(&e1, &dw);
                let de1: Vec<f64> = (0..3).map(|i| (dw[i] - e1dw * e1[i]) / wn).collect();
                let t1 = cross(x, &e1);
                let t2 = cross(p, &de1);
                for i in 0..3 {
                    out[i * 2] = de1[i];
                    out[i * 2 + 1] = t1[i] + t2[i];
                }
            }
            TargetKind::UnitSphere { .. } => {
                for k in 0..3 {
                    let e = quat_right_unit(x, k);
                    for a in 0..4 {
                        out[a * 3 + k] = e[a];
                    }
                }
            }
            TargetKind::CliffordTorus { r1, r2 } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = -x[1] / r1;
                out[2] = x[0] / r1;
                out[4 + 1] = -x[3] / r2;
                out[6 + 1] = x[2] / r2;
            }
        }
        Ok(())
    }

    fn sphere2_frame(&self, p: &[f64]) -> Result<([f64; 3], [f64; 3], f64)> {
        let a = self.frame_axis;
        let ap = dot(&a, p);
        let w = [a[0] - ap * p[0], a[1] - ap * p[1], a[2] - ap * p[2]];
        let wn = norm(&w);
        if wn < FRAME_AXIS_CLEARANCE {
            return Err(Error::FrameSingular);
        }
        let e1 = [w[0] / wn, w[1] / wn, w[2] / wn];
        let e2 = cross(p, &e1);
        Ok((e1, [e2[0], e2[1], e2[2]], wn))
    }
}

fn dist_slices(t: &EmbeddedTarget, p: &[f64], q: &[f64]) -> f64 {
    match t.kind {
        TargetKind::UnitSphere { .. } => {
            let pq = dot(p, q);
            let w: Vec<f64> = p.iter().zip(q).map(|(a, b)| b - pq * a).collect();
            norm(&w).atan2(pq)
        }
        TargetKind::CliffordTorus { .. } => {
            let r = t.radii();
            let a = r[0] * block_angle_diff(p, q, 0);
            let b = r[1] * block_angle_diff(p, q, 1);
            (a * a + b * b).sqrt()
        }
    }
}

fn block_angle(p: &[f64], b: usize) -> f64 {
    p[2 * b + 1].atan2(p[2 * b])
}

/// Angle from `p` to `q` in circle factor `b`, wrapped to `(-π, π]`.
fn block_angle_diff(p: &[f64], q: &[f64], b: usize) -> f64 {
    let (x0, y0, x1, y1) = (p[2 * b], p[2 * b + 1], q[2 * b], q[2 * b + 1]);
    (x0 * y1 - y0 * x1).atan2(x0 * x1 + y0 * y1)
}

/// Right multiplication of the quaternion `p` by the `k`-th imaginary unit.
fn quat_right_unit(p: &[f64], k: usize) -> [f64; 4] {
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    match k {
        0 => [-b, a, d, -c],
        1 => [-c, -d, a, b],
        _ => [-d, c, -b, a],
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> EmbeddedTarget {
        EmbeddedTarget::sphere(3).unwrap()
    }

    fn torus() -> EmbeddedTarget {
        EmbeddedTarget::clifford_torus(1.0, 1.0).unwrap()
    }

    fn random_point(t: &EmbeddedTarget, rng: &mut ChaCha8Rng) -> TargetPoint {
        loop {
            let z: Vec<f64> = (0..t.ambient_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = match t.kind {
                TargetKind::CliffordTorus { .. } => {
                    let mut w = z.clone();
                    for b in 0..2 {
                        let n = norm(&z[2 * b..2 * b + 2]).max(1e-3);
                        w[2 * b] /= n;
                        w[2 * b + 1] /= n;
                    }
                    w
                }
                _ => z,
            };
            if let Ok(p) = t.project(&z) {
                return p;
            }
        }
    }

    fn random_tangent(t: &EmbeddedTarget, p: &TargetPoint, rng: &mut ChaCha8Rng) -> TangentVector {
        let v = DVector::from_fn(t.ambient_dim, |_, _| rng.random_range(-1.0..1.0));
        TangentVector { base: p.clone(), vec: t.tangent_projector(p) * v }
    }

    #[test]
    fn sphere_projection_examples() {
        let t = sphere();
        assert_eq!(t.project(&[0.0, 0.0, 2.0]).unwrap().coords().as_slice(), &[0.0, 0.0, 1.0]);
        assert!(matches!(t.project(&[0.0, 0.0, 0.0]), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn torus_projection_normalizes_blocks() {
        let p = torus().project(&[1.1, 0.0, 0.9, 0.0]).unwrap();
        assert_eq!(p.coords().as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(torus().project(&[2.0, 0.0, 1.0, 0.0]), Err(Error::OutsideTube { .. })));
    }

    fn fd_jacobian(t: &EmbeddedTarget, z: &[f64], h: f64) -> DMatrix<f64> {
        let q = t.ambient_dim;
        let mut m = DMatrix::zeros(q, q);
        for b in 0..q {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[b] += h;
            zm[b] -= h;
            let d = (t.project(&zp).unwrap().coords - t.project(&zm).unwrap().coords) / (2.0 * h);
            m.set_column(b, &d);
        }
        m
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let t = sphere();
        let j = t.proj_jacobian(&[0.0, 0.0, 1.0]).unwrap();
        assert!((&j - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]))).amax() < 1e-15);
        assert!((fd_jacobian(&t, &[0.0, 0.0, 1.0], 1e-5) - &j).amax() < 1e-7);
        let t = torus();
        let z = [1.0, 0.0, 0.0, 1.0];
        let j = t.proj_jacobian(&z).unwrap();
        assert!((fd_jacobian(&t, &z, 1e-5) - &j).amax() < 1e-7);
        assert!((&j * &j - &j).amax() < 1e-15);
        let z = [1.1, 0.2, -0.3, 0.85];
        assert!((fd_jacobian(&t, &z, 1e-5) - t.proj_jacobian(&z).unwrap()).amax() < 1e-7);
    }

    #[test]
    fn hessian_matches_fd_and_is_symmetric() {
        for t in [sphere(), torus(), EmbeddedTarget::sphere(4).unwrap()] {
            let q = t.ambient_dim;
            let z: Vec<f64> = match t.kind {
                TargetKind::CliffordTorus { .. } => vec![0.9, 0.3, -0.2, 1.05],
                _ => (0..q).map(|i| 0.3 + 0.25 * i as f64).collect(),
            };
            let h = t.proj_hessian(&z).unwrap();
            let eps = 1e-5;
            for c in 0..q {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += eps;
                zm[c] -= eps;
                let d = (t.proj_jacobian(&zp).unwrap() - t.proj_jacobian(&zm).unwrap()) / (2.0 * eps);
                for a in 0..q {
                    for b in 0..q {
                        assert!((h[a][(b, c)] - d[(a, b)]).abs() < 1e-6);
                        assert_eq!(h[a][(b, c)], h[a][(c, b)]);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_second_fundamental_form() {
        let t = sphere();
        let p = t.point(&[0.0, 0.0, 1.0]).unwrap();
        let ii = t.second_fundamental_form(&p, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!((ii - DVector::from_vec(vec![0.0, 0.0, -1.0])).amax() < 1e-14);
    }

    #[test]
    fn geodesic_examples() {
        let t = sphere();
        let p = t.point(&[1.0, 0.0, 0.0]).unwrap();
        let q = t.point(&[0.0, 1.0, 0.0]).unwrap();
        let m = t.geodesic(&p, &q, 0.5).unwrap();
        let s = 0.5f64.sqrt();
        assert!((m.coords() - DVector::from_vec(vec![s, s, 0.0])).amax() < 1e-15);
        assert_eq!(t.geodesic(&p, &p, 0.3).unwrap(), p);
        assert!(t.log_map(&p, &p).unwrap().vec.amax() == 0.0);
        let anti = t.point(&[-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(t.geodesic(&p, &anti, 0.5), Err(Error::CutLocus { .. })));
        assert!((t.geodesic_distance(&p, &q) - PI / 2.0).abs() < 1e-15);
        let l = t.log_map(&p, &q).unwrap();
        assert!((l.vec - DVector::from_vec(vec![0.0, PI / 2.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn geodesic_endpoints_and_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [sphere(), torus()] {
            for _ in 0..20 {
                let p = random_point(&t, &mut rng);
                let q = random_point(&t, &mut rng);
                if t.geodesic_distance(&p, &q) > 0.9 * t.injectivity_radius {
                    continue;
                }
                assert!((t.geodesic(&p, &q, 1.0).unwrap().coords() - q.coords()).amax() < 1e-12);
                assert!((t.geodesic(&p, &q, 0.0).unwrap().coords() - p.coords()).amax() < 1e-12);
                let d = t.geodesic_distance(&p, &q);
                let mid = t.geodesic(&p, &q, 0.25).unwrap();
                assert!((t.geodesic_distance(&p, &mid) - 0.25 * d).abs() < 1e-12);
                assert!((t.log_map(&p, &q).unwrap().vec.norm() - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transport_examples() {
        let t = sphere();
        let p = t.point(&[1.0, 0.0, 0.0]).unwrap();
        let q = t.point(&[0.0, 1.0, 0.0]).unwrap();
        let x = t.tangent(&p, &[0.0, 0.0, 1.0]).unwrap();
        let y = t.parallel_transport_tangent(&p, &q, &x).unwrap();
        assert!((y.vec - x.vec.clone()).amax() < 1e-15);
        assert_eq!(t.parallel_transport_tangent(&p, &p, &x).unwrap().vec, x.vec);
        let x = t.tangent(&p, &[0.0, 1.0, 0.0]).unwrap();
        let y = t.parallel_transport_tangent(&p, &q, &x).unwrap();
        assert!((y.vec - DVector::from_vec(vec![-1.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn transport_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in [sphere(), torus(), EmbeddedTarget::sphere(4).unwrap()] {
            for _ in 0..50 {
                let p = random_point(&t, &mut rng);
                let q = random_point(&t, &mut rng);
                if t.geodesic_distance(&p, &q) > 0.95 * t.injectivity_radius {
                    continue;
                }
                let x = random_tangent(&t, &p, &mut rng);
                let z = random_tangent(&t, &p, &mut rng);
                let y = t.parallel_transport_tangent(&p, &q, &x).unwrap();
                let w = t.parallel_transport_tangent(&p, &q, &z).unwrap();
                assert!((y.vec.dot(&w.vec) - x.vec.dot(&z.vec)).abs() < 1e-10);
                let pq = t.tangent_projector(&q);
                assert!((&pq * &y.vec - &y.vec).amax() < 1e-10);
                let back = t.parallel_transport_tangent(&q, &p, &y).unwrap();
                assert!((back.vec - &x.vec).amax() < 1e-9);
                // closed-form sphere formula on tangent vectors
                if let TargetKind::UnitSphere { .. } = t.kind {
                    let (pv, qv) = (p.coords(), q.coords());
                    let f = &x.vec - (pv + qv) * (x.vec.dot(qv) / (1.0 + pv.dot(qv)));
                    assert!((f - &y.vec).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn torus_transport_keeps_frame_coefficients() {
        let t = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p = random_point(&t, &mut rng);
            let q = random_point(&t, &mut rng);
            if t.geodesic_distance(&p, &q) > 0.95 * t.injectivity_radius {
                continue;
            }
            let mut ep = vec![0.0; 8];
            let mut eq = vec![0.0; 8];
            t.frame_into(p.coords().as_slice(), &mut ep).unwrap();
            t.frame_into(q.coords().as_slice(), &mut eq).unwrap();
            let ep = DMatrix::from_row_slice(4, 2, &ep);
            let eq = DMatrix::from_row_slice(4, 2, &eq);
            let x = random_tangent(&t, &p, &mut rng);
            let y = t.parallel_transport_tangent(&p, &q, &x).unwrap();
            assert!((ep.transpose() * &x.vec - eq.transpose() * &y.vec).amax() < 1e-12);
        }
    }

    #[test]
    fn curvature_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [sphere(), torus()] {
            let p = random_point(&t, &mut rng);
            let x = random_tangent(&t, &p, &mut rng);
            let y = random_tangent(&t, &p, &mut rng);
            let z = random_tangent(&t, &p, &mut rng);
            let r = |a: &TangentVector, b: &TangentVector, c: &TangentVector| t.riemann_curvature(a, b, c).vec;
            assert!((r(&x, &y, &z) + r(&y, &x, &z)).amax() < 1e-14);
            assert!((r(&x, &y, &z) + r(&y, &z, &x) + r(&z, &x, &y)).amax() < 1e-12);
            assert!(r(&x, &x, &z).amax() < 1e-15);
            if let TargetKind::CliffordTorus { .. } = t.kind {
                assert_eq!(r(&x, &y, &z).amax(), 0.0);
            }
        }
    }

    #[test]
    fn distance_bound_on_near_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for t in [sphere(), torus()] {
            let delta = t.tube_radius;
            let bound = 1.0 / (1.0 - delta * t.weingarten_bound);
            let mut checked = 0;
            while checked < 10_000 {
                let p = random_point(&t, &mut rng);
                let v = random_tangent(&t, &p, &mut rng);
                let z = p.coords() + v.vec * rng.random_range(0.0..delta);
                let q = t.project(z.as_slice()).unwrap();
                let e = (p.coords() - q.coords()).norm();
                if e >= delta {
                    continue;
                }
                assert!(t.geodesic_distance(&p, &q) <= e * bound + 1e-15);
                checked += 1;
            }
        }
    }

    #[test]
    fn projection_idempotent_and_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [sphere(), torus()] {
            for _ in 0..200 {
                let p = random_point(&t, &mut rng);
                let dir = DVector::from_fn(t.ambient_dim, |_, _| rng.random_range(-1.0..1.0));
                let z = p.coords() + dir.normalize() * rng.random_range(0.0..t.tube_radius);
                let pz = t.project(z.as_slice()).unwrap();
                let ppz = t.project(pz.coords().as_slice()).unwrap();
                assert!((pz.coords() - ppz.coords()).amax() < 1e-12);
                for _ in 0..5 {
                    let s = random_point(&t, &mut rng);
                    assert!((&z - pz.coords()).norm() <= (&z - s.coords()).norm() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn kaehler_structures() {
        let t = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_point(&t, &mut rng);
        let i = t.complex_structure_matrix(p.coords().as_slice()).unwrap();
        let j = t.real_structure_matrix(p.coords().as_slice()).unwrap();
        let pr = t.tangent_projector(&p);
        assert!((&i * &i + &pr).amax() < 1e-14);
        assert!((&j * &j - &pr).amax() < 1e-14);
        assert!((&j * &i + &i * &j).amax() < 1e-14);
        let mut e = vec![0.0; 8];
        t.frame_into(p.coords().as_slice(), &mut e).unwrap();
        let e = DMatrix::from_row_slice(4, 2, &e);
        let (t1, t2) = (e.column(0).clone_owned(), e.column(1).clone_owned());
        assert!((&i * &t1 - &t2).amax() < 1e-14 && (&i * &t2 + &t1).amax() < 1e-14);
        assert!((&j * &t1 - &t1).amax() < 1e-14 && (&j * &t2 + &t2).amax() < 1e-14);
        for _ in 0..20 {
            let q = random_point(&t, &mut rng);
            if t.geodesic_distance(&p, &q) > 0.95 * t.injectivity_radius {
                continue;
            }
            let x = random_tangent(&t, &p, &mut rng);
            let a = t.parallel_transport_tangent(&p, &q, &t.real_structure(&x).unwrap()).unwrap();
            let b = t.real_structure(&t.parallel_transport_tangent(&p, &q, &x).unwrap()).unwrap();
            assert!((a.vec - b.vec).amax() < 1e-10);
        }

        let s = sphere();
        let p = random_point(&s, &mut rng);
        let x = random_tangent(&s, &p, &mut rng);
        let y = random_tangent(&s, &p, &mut rng);
        let ix = s.complex_structure(&x).unwrap();
        let iy = s.complex_structure(&y).unwrap();
        assert!((s.complex_structure(&ix).unwrap().vec + &x.vec).amax() < 1e-14);
        assert!((ix.vec.dot(&iy.vec) - x.vec.dot(&y.vec)).abs() < 1e-14);
        assert_eq!(s.real_structure(&x), Err(Error::StructureUnavailable("real structure")));
    }

    #[test]
    fn frames_orthonormal_and_differentials_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for t in [sphere(), torus(), EmbeddedTarget::sphere(2).unwrap(), EmbeddedTarget::sphere(4).unwrap()] {
            let (q, n) = (t.ambient_dim, t.intrinsic_dim);
            for _ in 0..10 {
                let p = random_point(&t, &mut rng);
                let mut e = vec![0.0; q * n];
                if t.frame_into(p.coords().as_slice(), &mut e).is_err() {
                    continue;
                }
                let em = DMatrix::from_row_slice(q, n, &e);
                assert!((em.transpose() * &em - DMatrix::identity(n, n)).amax() < 1e-13);
                assert!((t.tangent_projector(&p) * &em - &em).amax() < 1e-13);
                let x = random_tangent(&t, &p, &mut rng);
                let h = 1e-6;
                let mut ep = vec![0.0; q * n];
                let mut emn = vec![0.0; q * n];
                let zp = t.project((p.coords() + &x.vec * h).as_slice()).unwrap();
                let zm = t.project((p.coords() - &x.vec * h).as_slice()).unwrap();
                t.frame_into(zp.coords().as_slice(), &mut ep).unwrap();
                t.frame_into(zm.coords().as_slice(), &mut emn).unwrap();
                let mut de = vec![0.0; q * n];
                t.frame_differential_into(p.coords().as_slice(), x.vec.as_slice(), &mut de).unwrap();
                for k in 0..q * n {
                    assert!(((ep[k] - emn[k]) / (2.0 * h) - de[k]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn sphere_frame_is_complex_adapted() {
        let t = sphere();
        let p = t.project(&[0.3, -0.5, 0.2]).unwrap();
        let mut e = vec![0.0; 6];
        t.frame_into(p.coords().as_slice(), &mut e).unwrap();
        let e = DMatrix::from_row_slice(3, 2, &e);
        let i = t.complex_structure_matrix(p.coords().as_slice()).unwrap();
        assert!((&i * e.column(0) - e.column(1)).amax() < 1e-14);
        assert_eq!(t.frame_into(&[0.0, 0.0, 1.0], &mut [0.0; 6]), Err(Error::FrameSingular));
    }

    #[test]
    fn tube_radius_respects_weingarten_bound() {
        for t in [sphere(), torus(), EmbeddedTarget::clifford_torus(0.5, 2.0).unwrap()] {
            assert!(t.tube_radius * t.weingarten_bound < 1.0);
            assert!(t.epsilon < 0.5 * t.injectivity_radius);
        }
        assert!(sphere().with_tube_radius(1.0).is_err());
    }
}
