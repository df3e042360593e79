//! Maps into the target, twisted spinor fields, and the Dirac operator
//! along a map.
//!
//! A twisted spinor is stored in ambient form: `2q` complex numbers per site
//! laid out as `values[(site*q + A)*2 + s]`, tangential in the target index
//! `A`. The operator is assembled in a target-adapted orthonormal frame
//! `E(u(x))` with the pulled-back Levi-Civita connection form
//! `ω_β = Eᵀ dE[∂_β u]`:
//!
//! `D x = Σ_β e_β · (∂_β x + ω_β x)`
//!
//! and mapped back to ambient form by `ψ = E x`. On Kähler targets the
//! frame is complex-adapted, so the `(1,0)` block is the line
//! `f = (E_1 - i E_2)/√2` and `D_{1,0}` is the `U(1)`-twisted operator with
//! connection `f* ω f`.

use crate::domain::{clifford_basis, quaternionic_j1, Deriv, TorusDomain};
use crate::error::{Error, Result};
use crate::linalg::{self, cdot, cluster_ids, cnorm, CLUSTER_ABS_TOL, CLUSTER_REL_TOL};
use crate::target::{EmbeddedTarget, TargetPoint};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const SITE_TOL: f64 = 1e-10;
pub const TANGENCY_LIMIT: f64 = 1e-6;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct MapField {
    pub domain: TorusDomain,
    pub target: EmbeddedTarget,
    values: Vec<f64>,
}

impl MapField {
    /// Wraps on-target values `values[site*q + A]`.
    pub fn new(domain: &TorusDomain, target: &EmbeddedTarget, values: Vec<f64>) -> Result<Self> {
        let q = target.ambient_dim;
        if values.len() != domain.n_sites() * q {
            return Err(Error::InvalidInput(format!(
                "map needs {} values, got {}",
                domain.n_sites() * q,
                values.len()
            )));
        }
        let mut p = vec![0.0; q];
        for site in values.chunks(q) {
            target.project_into(site, &mut p)?;
            let r = site.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if r > SITE_TOL {
                return Err(Error::InvalidInput(format!("map value off target by {r:.3e}")));
            }
        }
        Ok(MapField { domain: domain.clone(), target: target.clone(), values })
    }

    /// Projects arbitrary ambient values onto the target site by site.
    pub fn from_ambient(domain: &TorusDomain, target: &EmbeddedTarget, raw: &[f64]) -> Result<Self> {
        let q = target.ambient_dim;
        let mut values = vec![0.0; raw.len()];
        for (z, out) in raw.chunks(q).zip(values.chunks_mut(q)) {
            target.project_into(z, out)?;
        }
        Self::new(domain, target, values)
    }

    pub fn from_fn(domain: &TorusDomain, target: &EmbeddedTarget, f: impl Fn(f64, f64) -> Vec<f64>) -> Result<Self> {
        let raw: Vec<f64> = (0..domain.n_sites())
            .flat_map(|k| {
                let (x, y) = domain.position(k);
                f(x, y)
            })
            .collect();
        Self::from_ambient(domain, target, &raw)
    }

    pub fn constant(domain: &TorusDomain, target: &EmbeddedTarget, p: &[f64]) -> Result<Self> {
        let p = target.point(p)?;
        let values = p.coords().as_slice().repeat(domain.n_sites());
        Self::new(domain, target, values)
    }

    /// Map into the Clifford torus given by two angle functions.
    pub fn torus_angles(
        domain: &TorusDomain,
        target: &EmbeddedTarget,
        angles: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self> {
        let (r1, r2) = match target.kind {
            crate::target::TargetKind::CliffordTorus { r1, r2 } => (r1, r2),
            _ => return Err(Error::InvalidInput("angle maps need a Clifford torus target".into())),
        };
        Self::from_fn(domain, target, |x, y| {
            let (a, b) = angles(x, y);
            vec![r1 * a.cos(), r1 * a.sin(), r2 * b.cos(), r2 * b.sin()]
        })
    }

    /// Adds a random smooth ambient field with Fourier modes up to
    /// `max_mode` and sup-norm `amplitude`, then projects back.
    pub fn perturbed<R: Rng>(&self, amplitude: f64, max_mode: usize, rng: &mut R) -> Result<Self> {
        let q = self.q();
        let d = &self.domain;
        let k = max_mode as i64;
        let mut modes = Vec::new();
        for c in 0..q {
            for k1 in -k..=k {
                for k2 in -k..=k {
                    modes.push((c, k1, k2, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                }
            }
        }
        let mut field = vec![0.0; self.values.len()];
        for site in 0..d.n_sites() {
            let (x, y) = d.position(site);
            for &(c, k1, k2, a, b) in &modes {
                let ph = 2.0 * std::f64::consts::PI * (k1 as f64 * x / d.l1 + k2 as f64 * y / d.l2);
                field[site * q + c] += a * ph.cos() + b * ph.sin();
            }
        }
        let m = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = if m > 0.0 { amplitude / m } else { 0.0 };
        let raw: Vec<f64> = self.values.iter().zip(&field).map(|(u, f)| u + s * f).collect();
        Self::from_ambient(d, &self.target, &raw)
    }

    pub fn q(&self) -> usize {
        self.target.ambient_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn site(&self, k: usize) -> &[f64] {
        let q = self.q();
        &self.values[k * q..(k + 1) * q]
    }

    pub fn point(&self, k: usize) -> TargetPoint {
        self.target.point(self.site(k)).expect("map values lie on the target")
    }

    /// Spectral first derivatives, each `[site*q + A]`.
    pub fn gradient(&self) -> [Vec<f64>; 2] {
        let mut d = self.domain.real_derivatives(&self.values, self.q(), &[Deriv::Dx, Deriv::Dy]);
        let dy = d.pop().unwrap();
        let dx = d.pop().unwrap();
        [dx, dy]
    }

    /// Tangent projectors `π^A_B(u(x))`, row-major per site.
    pub fn projectors(&self) -> Vec<f64> {
        let q = self.q();
        let mut out = vec![0.0; self.domain.n_sites() * q * q];
        for k in 0..self.domain.n_sites() {
            self.target
                .proj_jacobian_into(self.site(k), &mut out[k * q * q..(k + 1) * q * q])
                .expect("map values lie in the tube");
        }
        out
    }

    /// Largest site-wise Euclidean distance to another map.
    pub fn c0_distance(&self, other: &MapField) -> f64 {
        let q = self.q();
        self.values
            .chunks(q)
            .zip(other.values.chunks(q))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Section of `ΣM ⊗ u*TN` in ambient form.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistedSpinorField {
    pub basepoint: Arc<MapField>,
    /// `values[(site*q + A)*2 + s]`.
    pub values: Vec<C64>,
}

impl TwistedSpinorField {
    pub fn zeros(u: &Arc<MapField>) -> Self {
        TwistedSpinorField { basepoint: u.clone(), values: vec![ZERO; u.domain.n_sites() * u.q() * 2] }
    }

    /// Random tangential field with entries of unit scale.
    pub fn random_tangential<R: Rng>(u: &Arc<MapField>, rng: &mut R) -> Self {
        let mut f = Self::zeros(u);
        f.values
            .iter_mut()
            .for_each(|v| *v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        f.project_tangent()
    }

    /// Random smooth tangential field built from Fourier modes up to
    /// `max_mode` (shifted by the spin structure), unit sup-norm scale.
    pub fn random_smooth<R: Rng>(u: &Arc<MapField>, max_mode: usize, rng: &mut R) -> Self {
        let d = &u.domain;
        let q = u.q();
        let k = max_mode as i64;
        let (s1, s2) = (d.spin[0].shift(), d.spin[1].shift());
        let mut f = Self::zeros(u);
        for c in 0..2 * q {
            for k1 in -k..=k {
                for k2 in -k..=k {
                    let a = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    for site in 0..d.n_sites() {
                        let (x, y) = d.position(site);
                        let ph = 2.0 * std::f64::consts::PI * ((k1 as f64 + s1) * x / d.l1 + (k2 as f64 + s2) * y / d.l2);
                        f.values[site * 2 * q + c] += a * C64::from_polar(1.0, ph);
                    }
                }
            }
        }
        let m = f.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        f.scaled(C64::new(1.0 / m, 0.0)).project_tangent()
    }

    pub fn project_tangent(&self) -> Self {
        let u = &self.basepoint;
        let q = u.q();
        let proj = u.projectors();
        let mut out = Self::zeros(u);
        for k in 0..u.domain.n_sites() {
            let p = &proj[k * q * q..(k + 1) * q * q];
            for a in 0..q {
                for s in 0..2 {
                    out.values[(k * q + a) * 2 + s] =
                        (0..q).map(|b| self.values[(k * q + b) * 2 + s] * p[a * q + b]).sum();
                }
            }
        }
        out
    }

    /// Largest site-wise `|πψ - ψ|`.
    pub fn tangency_residual(&self) -> f64 {
        let p = self.project_tangent();
        let q2 = 2 * self.basepoint.q();
        self.values
            .chunks(q2)
            .zip(p.values.chunks(q2))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn l2_inner(&self, other: &Self) -> C64 {
        cdot(&self.values, &other.values) * self.basepoint.domain.cell_area()
    }

    pub fn l2_norm(&self) -> f64 {
        cnorm(&self.values) * self.basepoint.domain.cell_area().sqrt()
    }

    /// Largest site-wise Euclidean norm.
    pub fn c0_norm(&self) -> f64 {
        let q2 = 2 * self.basepoint.q();
        self.values
            .chunks(q2)
            .map(|c| c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: C64) -> Self {
        TwistedSpinorField { basepoint: self.basepoint.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        TwistedSpinorField {
            basepoint: self.basepoint.clone(),
            values: self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "(1,0)")]
    TypeOneZero,
}

/// Dirac operator along a map, in block coordinates `x[(site*r + k)*2 + s]`
/// where `r` is the real rank `n` (full) or the complex rank `n/2` (1,0).
#[derive(Clone, Debug)]
pub struct TwistedDirac {
    pub map: Arc<MapField>,
    pub block: Block,
    rank: usize,
    /// `basis[(site*q + A)*r + k]`: ambient image of block coordinate `k`.
    basis: Vec<C64>,
    /// `conn[((beta*N + site)*r + k)*r + l]`, anti-Hermitian per site.
    conn: Vec<C64>,
}

impl TwistedDirac {
    pub fn new(u: &Arc<MapField>, block: Block) -> Result<Self> {
        let t = &u.target;
        let (q, n) = (t.ambient_dim, t.intrinsic_dim);
        let ns = u.domain.n_sites();
        if block == Block::TypeOneZero && t.kaehler.is_none() {
            return Err(Error::StructureUnavailable("complex structure"));
        }
        let grad = u.gradient();
        let proj = u.projectors();
        let mut frames = vec![0.0; ns * q * n];
        let mut omega = vec![0.0; 2 * ns * n * n];
        let mut de = vec![0.0; q * n];
        let mut x = vec![0.0; q];
        for k in 0..ns {
            let p = u.site(k);
            let e = &mut frames[k * q * n..(k + 1) * q * n];
            t.frame_into(p, e)?;
            let pk = &proj[k * q * q..(k + 1) * q * q];
            for beta in 0..2 {
                let g = &grad[beta][k * q..(k + 1) * q];
                for a in 0..q {
                    x[a] = (0..q).map(|b| pk[a * q + b] * g[b]).sum();
                }
                t.frame_differential_into(p, &x, &mut de)?;
                let w = &mut omega[(beta * ns + k) * n * n..(beta * ns + k + 1) * n * n];
                for i in 0..n {
                    for j in 0..n {
                        w[i * n + j] = (0..q).map(|a| e[a * n + i] * de[a * n + j]).sum();
                    }
                }
                for i in 0..n {
                    w[i * n + i] = 0.0;
                    for j in i + 1..n {
                        let v = 0.5 * (w[i * n + j] - w[j * n + i]);
                        w[i * n + j] = v;
                        w[j * n + i] = -v;
                    }
                }
            }
        }
        let (rank, mix) = match block {
            Block::Full => {
                let mut m = vec![ZERO; n * n];
                for i in 0..n {
                    m[i * n + i] = C64::new(1.0, 0.0);
                }
                (n, m)
            }
            Block::TypeOneZero => {
                let r = n / 2;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut m = vec![ZERO; n * r];
                for k in 0..r {
                    m[(2 * k) * r + k] = C64::new(s, 0.0);
                    m[(2 * k + 1) * r + k] = C64::new(0.0, -s);
                }
                (r, m)
            }
        };
        let mut basis = vec![ZERO; ns * q * rank];
        for k in 0..ns {
            for a in 0..q {
                for l in 0..rank {
                    basis[(k * q + a) * rank + l] = (0..n).map(|i| mix[i * rank + l] * frames[(k * q + a) * n + i]).sum();
                }
            }
        }
        let mut conn = vec![ZERO; 2 * ns * rank * rank];
        for bk in 0..2 * ns {
            let w = &omega[bk * n * n..(bk + 1) * n * n];
            for i in 0..rank {
                for j in 0..rank {
                    let mut acc = ZERO;
                    for a in 0..n {
                        for b in 0..n {
                            acc += mix[a * rank + i].conj() * w[a * n + b] * mix[b * rank + j];
                        }
                    }
                    conn[(bk * rank + i) * rank + j] = acc;
                }
            }
        }
        Ok(TwistedDirac { map: u.clone(), block, rank, basis, conn })
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.map.domain
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        2 * self.rank * self.domain().n_sites()
    }

    /// Connection matrix of direction `beta` at `site`, row-major `r×r`.
    pub fn connection(&self, beta: usize, site: usize) -> &[C64] {
        let (r, ns) = (self.rank, self.domain().n_sites());
        &self.conn[(beta * ns + site) * r * r..(beta * ns + site + 1) * r * r]
    }

    /// Matrix-free application in block coordinates.
    pub fn apply_block(&self, x: &[C64]) -> Vec<C64> {
        let r = self.rank;
        let ns = self.domain().n_sites();
        let mut out = self.domain().dirac_multi(x, r);
        for k in 0..ns {
            for beta in 0..2 {
                let c = self.connection(beta, k);
                for i in 0..r {
                    let mut v = [ZERO; 2];
                    for j in 0..r {
                        let cij = c[i * r + j];
                        if cij != ZERO {
                            v[0] += cij * x[(k * r + j) * 2];
                            v[1] += cij * x[(k * r + j) * 2 + 1];
                        }
                    }
                    let w = clifford_basis(beta, v);
                    out[(k * r + i) * 2] += w[0];
                    out[(k * r + i) * 2 + 1] += w[1];
                }
            }
        }
        out
    }

    /// Dense matrix in block coordinates (Hermitian up to rounding; the
    /// stored matrix is symmetrized).
    pub fn block_matrix(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![ZERO; n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply_block(&e);
            e[j] = ZERO;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        let mh = m.adjoint();
        (m + mh) * C64::new(0.5, 0.0)
    }

    /// `x = B* ψ` from ambient to block coordinates.
    pub fn compress(&self, psi: &[C64]) -> Vec<C64> {
        let (q, r) = (self.map.q(), self.rank);
        let ns = self.domain().n_sites();
        let mut x = vec![ZERO; ns * r * 2];
        for k in 0..ns {
            for l in 0..r {
                for s in 0..2 {
                    x[(k * r + l) * 2 + s] =
                        (0..q).map(|a| self.basis[(k * q + a) * r + l].conj() * psi[(k * q + a) * 2 + s]).sum();
                }
            }
        }
        x
    }

    /// `ψ = B x` from block to ambient coordinates.
    pub fn expand(&self, x: &[C64]) -> TwistedSpinorField {
        let (q, r) = (self.map.q(), self.rank);
        let ns = self.domain().n_sites();
        let mut psi = TwistedSpinorField::zeros(&self.map);
        for k in 0..ns {
            for a in 0..q {
                for s in 0..2 {
                    psi.values[(k * q + a) * 2 + s] =
                        (0..r).map(|l| self.basis[(k * q + a) * r + l] * x[(k * r + l) * 2 + s]).sum();
                }
            }
        }
        psi
    }

    fn check_input(&self, psi: &TwistedSpinorField) -> Result<()> {
        if psi.values.len() != self.map.domain.n_sites() * self.map.q() * 2 {
            return Err(Error::InvalidInput("spinor field has the wrong size".into()));
        }
        let res = psi.tangency_residual();
        if res > TANGENCY_LIMIT {
            return Err(Error::TangencyViolation { residual: res, limit: TANGENCY_LIMIT });
        }
        Ok(())
    }

    /// Matrix-free `D ψ` on ambient tangential fields. For the `(1,0)`
    /// block the `(0,1)` part of the input is discarded.
    pub fn apply_dirac(&self, psi: &TwistedSpinorField) -> Result<TwistedSpinorField> {
        self.check_input(psi)?;
        Ok(self.expand(&self.apply_block(&self.compress(&psi.values))))
    }

    /// Ambient matrix (dimension `2qN`) with its site-wise projector.
    pub fn assemble(&self) -> DiracMatrix {
        let m = self.block_matrix();
        let (q, r) = (self.map.q(), self.rank);
        let ns = self.domain().n_sites();
        let na = ns * q * 2;
        let mut b = DMatrix::<C64>::zeros(na, self.dim());
        for k in 0..ns {
            for a in 0..q {
                for l in 0..r {
                    for s in 0..2 {
                        b[((k * q + a) * 2 + s, (k * r + l) * 2 + s)] = self.basis[(k * q + a) * r + l];
                    }
                }
            }
        }
        let matrix = &b * m * b.adjoint();
        let projector = match self.block {
            Block::Full => self.map.projectors().into_iter().map(|v| C64::new(v, 0.0)).collect(),
            Block::TypeOneZero => {
                let mut p = vec![ZERO; ns * q * q];
                for k in 0..ns {
                    for a in 0..q {
                        for c in 0..q {
                            p[(k * q + a) * q + c] =
                                (0..r).map(|l| self.basis[(k * q + a) * r + l] * self.basis[(k * q + c) * r + l].conj()).sum();
                        }
                    }
                }
                p
            }
        };
        DiracMatrix { matrix, projector, q, n_sites: ns }
    }

    /// `(ψ_{1,0}, ψ_{0,1})` with `ψ_{1,0} = ½(π - i J) ψ`, where `J` is the
    /// target complex structure.
    pub fn split_10_01(u: &MapField, psi: &TwistedSpinorField) -> Result<(TwistedSpinorField, TwistedSpinorField)> {
        let t = &u.target;
        let q = u.q();
        let proj = u.projectors();
        let mut a = psi.clone();
        for k in 0..u.domain.n_sites() {
            let j = t.complex_structure_matrix(u.site(k))?;
            for r in 0..q {
                for s in 0..2 {
                    let mut v = ZERO;
                    for c in 0..q {
                        let x = psi.values[(k * q + c) * 2 + s];
                        v += x * C64::new(0.5 * proj[(k * q + r) * q + c], -0.5 * j[(r, c)]);
                    }
                    a.values[(k * q + r) * 2 + s] = v;
                }
            }
        }
        let b = psi.sub(&a);
        Ok((a, b))
    }

    /// Quaternionic structure `J(ψ^A ∂_A) = j1(ψ^A) j2(∂_A)`.
    pub fn quaternionic_j(u: &MapField, psi: &TwistedSpinorField) -> Result<TwistedSpinorField> {
        let t = &u.target;
        let q = u.q();
        let mut out = psi.clone();
        for k in 0..u.domain.n_sites() {
            let j2 = t.real_structure_matrix(u.site(k))?;
            for b in 0..q {
                let mut v = [ZERO; 2];
                for a in 0..q {
                    let w = quaternionic_j1([psi.values[(k * q + a) * 2], psi.values[(k * q + a) * 2 + 1]]);
                    v[0] += w[0] * j2[(b, a)];
                    v[1] += w[1] * j2[(b, a)];
                }
                out.values[(k * q + b) * 2] = v[0];
                out.values[(k * q + b) * 2 + 1] = v[1];
            }
        }
        Ok(out)
    }

    /// `max ‖D J x - J D x‖ / ‖x‖` over `probes` random `(1,0)` fields.
    pub fn j_commutation_defect<R: Rng>(&self, probes: usize, rng: &mut R) -> Result<f64> {
        if self.block != Block::TypeOneZero {
            return Err(Error::InvalidInput("J acts on the (1,0) block".into()));
        }
        if !self.map.target.has_real_structure() {
            return Err(Error::StructureUnavailable("real structure"));
        }
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let x: Vec<C64> =
                (0..self.dim()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let jx = self.compress(&Self::quaternionic_j(&self.map, &self.expand(&x))?.values);
            let djx = self.apply_block(&jx);
            let dx = self.expand(&self.apply_block(&x));
            let jdx = self.compress(&Self::quaternionic_j(&self.map, &dx)?.values);
            let d: f64 = djx.iter().zip(&jdx).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(d / cnorm(&x));
        }
        Ok(worst)
    }

    /// The `k` smallest-`|λ|` eigenpairs by a dense Hermitian solve.
    pub fn eigen_solve(&self, k: usize) -> Result<SpectralData> {
        if k > self.dim() {
            return Err(Error::InvalidInput(format!("requested {k} eigenpairs of a {}-dimensional operator", self.dim())));
        }
        let m = self.block_matrix();
        SpectralData::from_matrix(&m, k)
    }

    /// Full spectrum (`k = dim`).
    pub fn spectrum(&self) -> Result<SpectralData> {
        self.eigen_solve(self.dim())
    }

    pub fn kernel_dimension(&self, lambda: f64) -> Result<usize> {
        self.spectrum()?.kernel_count(lambda)
    }

    pub fn spectral_gap(&self) -> Result<f64> {
        self.spectrum()?.spectral_gap()
    }

    /// Orthogonal projection onto the eigenvectors with `|λ| < Λ`.
    pub fn project_kernel_eigen(&self, psi: &TwistedSpinorField, lambda: f64) -> Result<TwistedSpinorField> {
        self.check_input(psi)?;
        let sd = self.spectrum()?;
        Ok(self.expand(&sd.project(&self.compress(&psi.values), lambda)?))
    }

    /// Resolvent projection `-(1/2πi) ∮ (D - λ)^{-1} ψ dλ` over the circle of
    /// radius `Λ/2` by the trapezoidal rule with `nodes` points.
    pub fn project_kernel_contour(&self, psi: &TwistedSpinorField, lambda: f64, nodes: usize) -> Result<TwistedSpinorField> {
        self.check_input(psi)?;
        let x = self.compress(&psi.values);
        let out = self.contour_apply(&self.block_matrix(), &[x], lambda, nodes)?;
        Ok(self.expand(&out[0]))
    }

    /// Contour projection of several block vectors with a prebuilt matrix.
    pub fn contour_apply(&self, m: &DMatrix<C64>, xs: &[Vec<C64>], lambda: f64, nodes: usize) -> Result<Vec<Vec<C64>>> {
        if !(lambda > 0.0) || nodes == 0 {
            return Err(Error::InvalidInput("contour needs Λ > 0 and at least one node".into()));
        }
        let rho = 0.5 * lambda;
        let ev = m.clone().symmetric_eigenvalues();
        let dist = ev.iter().map(|v| (v.abs() - rho).abs()).fold(f64::INFINITY, f64::min);
        if dist < 1e-6 {
            return Err(Error::ContourHitsSpectrum { distance: dist });
        }
        let n = m.nrows();
        let rhs = DMatrix::from_fn(n, xs.len(), |i, j| xs[j][i]);
        let mut acc = DMatrix::<C64>::zeros(n, xs.len());
        for j in 0..nodes {
            let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64;
            let z = C64::from_polar(rho, th);
            let a = DMatrix::<C64>::identity(n, n) * z - m;
            let sol = a.lu().solve(&rhs).ok_or_else(|| Error::SolverFailure(format!("singular shift at node {j}")))?;
            acc += sol * z;
        }
        acc /= C64::new(nodes as f64, 0.0);
        Ok((0..xs.len()).map(|j| acc.column(j).iter().copied().collect()).collect())
    }
}

/// Ambient assembled operator with its site-wise projector.
#[derive(Clone, Debug)]
pub struct DiracMatrix {
    pub matrix: DMatrix<C64>,
    /// Projector onto the block fibre, `projector[(site*q + A)*q + B]`.
    pub projector: Vec<C64>,
    q: usize,
    n_sites: usize,
}

impl DiracMatrix {
    pub fn hermiticity_defect(&self) -> f64 {
        linalg::cmax_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    fn projector_matrix(&self) -> DMatrix<C64> {
        let q = self.q;
        let n = self.n_sites * q * 2;
        let mut p = DMatrix::zeros(n, n);
        for k in 0..self.n_sites {
            for a in 0..q {
                for b in 0..q {
                    for s in 0..2 {
                        p[((k * q + a) * 2 + s, (k * q + b) * 2 + s)] = self.projector[(k * q + a) * q + b];
                    }
                }
            }
        }
        p
    }

    pub fn projector_commutation_defect(&self) -> f64 {
        let p = self.projector_matrix();
        linalg::cmax_abs(&(&self.matrix * &p - &p * &self.matrix))
    }

    pub fn apply(&self, psi: &TwistedSpinorField) -> TwistedSpinorField {
        let v = &self.matrix * DVector::from_column_slice(&psi.values);
        TwistedSpinorField { basepoint: psi.basepoint.clone(), values: v.iter().copied().collect() }
    }
}

/// Low eigenpairs of a twisted Dirac operator in block coordinates.
#[derive(Clone, Debug)]
pub struct SpectralData {
    /// Sorted by `|λ|`, ties by `λ`.
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors in block coordinates.
    pub eigenvectors: DMatrix<C64>,
    /// `<v, G v>` per eigenvector.
    pub chirality: Vec<f64>,
    /// Clusters of numerically equal eigenvalues.
    pub cluster_ids: Vec<usize>,
    /// `Λ` from [`Self::spectral_gap`] when it is well defined.
    pub gap: Option<f64>,
    pub kernel_count: Option<usize>,
    /// Whether every eigenvalue of the operator is present.
    pub complete: bool,
}

impl SpectralData {
    pub fn from_matrix(m: &DMatrix<C64>, k: usize) -> Result<Self> {
        let n = m.nrows();
        let (vals, vecs) = linalg::hermitian_eigen(m.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| vals[i].abs().total_cmp(&vals[j].abs()).then(vals[i].total_cmp(&vals[j])));
        order.truncate(k);
        let eigenvalues: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let eigenvectors = DMatrix::from_fn(n, k, |r, c| vecs[(r, order[c])]);
        let worst = (0..k)
            .map(|c| {
                let v = eigenvectors.column(c);
                (m * v - v * C64::new(eigenvalues[c], 0.0)).norm()
            })
            .fold(0.0, f64::max);
        if worst > 1e-8 {
            return Err(Error::EigenFailure { residual: worst, target: 1e-8 });
        }
        Ok(Self::assemble(eigenvalues, eigenvectors, k == n))
    }

    pub(crate) fn assemble(eigenvalues: Vec<f64>, eigenvectors: DMatrix<C64>, complete: bool) -> Self {
        let k = eigenvalues.len();
        let chirality = (0..k)
            .map(|c| {
                eigenvectors.column(c).iter().enumerate().map(|(i, v)| if i % 2 == 0 { v.norm_sqr() } else { -v.norm_sqr() }).sum()
            })
            .collect();
        let mut signed: Vec<usize> = (0..k).collect();
        signed.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]));
        let sorted: Vec<f64> = signed.iter().map(|&i| eigenvalues[i]).collect();
        let ids = cluster_ids(&sorted, CLUSTER_REL_TOL, CLUSTER_ABS_TOL);
        let mut cluster = vec![0; k];
        for (pos, &i) in signed.iter().enumerate() {
            cluster[i] = ids[pos];
        }
        let mut sd = SpectralData {
            eigenvalues,
            eigenvectors,
            chirality,
            cluster_ids: cluster,
            gap: None,
            kernel_count: None,
            complete,
        };
        if let Ok(g) = sd.spectral_gap() {
            sd.gap = Some(g);
            sd.kernel_count = sd.kernel_count(g).ok();
        }
        sd
    }

    /// Half the first eigenvalue magnitude above the near-zero cluster. The
    /// cluster boundary is the largest jump `|λ_c| / |λ_{c-1}|` (with
    /// `|λ_{-1}| = 0` and a floor of `1e-8`); it must be at least 10.
    pub fn spectral_gap(&self) -> Result<f64> {
        let a: Vec<f64> = self.eigenvalues.iter().map(|v| v.abs()).collect();
        let mut best = (0usize, 0.0f64);
        for c in 0..a.len() {
            let prev = if c == 0 { 0.0 } else { a[c - 1] };
            let ratio = a[c] / prev.max(1e-8);
            if ratio > best.1 {
                best = (c, ratio);
            }
        }
        if best.1 < 10.0 {
            return Err(Error::AmbiguousCluster(format!("largest relative gap {:.3} is below 10", best.1)));
        }
        Ok(0.5 * a[best.0])
    }

    /// `#{|λ| < Λ}`.
    pub fn kernel_count(&self, lambda: f64) -> Result<usize> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput(format!("threshold {lambda} must be positive")));
        }
        let top = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if lambda >= top {
            return Err(Error::AmbiguousCluster(format!(
                "threshold {lambda:.4e} is not below the largest computed |λ| = {top:.4e}"
            )));
        }
        if let Some(v) = self.eigenvalues.iter().find(|v| (v.abs() - lambda).abs() <= 1e-6 * lambda) {
            return Err(Error::AmbiguousCluster(format!("eigenvalue {v:.6e} sits on the threshold")));
        }
        Ok(self.eigenvalues.iter().filter(|v| v.abs() < lambda).count())
    }

    /// Orthogonal projection of a block vector onto `|λ| < Λ`.
    pub fn project(&self, x: &[C64], lambda: f64) -> Result<Vec<C64>> {
        let c = self.kernel_count(lambda)?;
        let mut out = vec![ZERO; x.len()];
        for j in 0..c {
            let v: Vec<C64> = self.eigenvectors.column(j).iter().copied().collect();
            let coef = cdot(&v, x);
            linalg::caxpy(&mut out, coef, &v);
        }
        Ok(out)
    }

    /// Largest distance from `-λ` to the computed spectrum over eigenvalues
    /// `λ` whose mirror image lies in the computed range.
    pub fn symmetry_defect(&self) -> f64 {
        let top = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for &v in &self.eigenvalues {
            if !self.complete && v.abs() >= top * (1.0 - 1e-8) {
                continue;
            }
            let d = self.eigenvalues.iter().map(|w| (w + v).abs()).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
        worst
    }

    /// Multiplicity of each cluster, in order of first appearance.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let n = self.cluster_ids.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; n];
        for &c in &self.cluster_ids {
            sizes[c] += 1;
        }
        sizes
    }

    /// Whether every fully computed cluster has even size. When the data is
    /// truncated, the cluster of largest `|λ|` may be incomplete and is
    /// ignored.
    pub fn even_multiplicity(&self) -> bool {
        let sizes = self.cluster_sizes();
        let top = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        sizes.iter().enumerate().all(|(c, &s)| {
            let partial = !self.complete
                && self
                    .eigenvalues
                    .iter()
                    .zip(&self.cluster_ids)
                    .any(|(v, &id)| id == c && v.abs() >= top * (1.0 - 1e-8));
            partial || s % 2 == 0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{analytic_spectrum, Boundary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PP: [Boundary; 2] = [Boundary::Periodic, Boundary::Periodic];
    const AA: [Boundary; 2] = [Boundary::Antiperiodic, Boundary::Antiperiodic];

    fn torus_target() -> EmbeddedTarget {
        EmbeddedTarget::clifford_torus(1.0, 1.0).unwrap()
    }

    fn sphere_map(d: &TorusDomain, amp: f64, seed: u64) -> Arc<MapField> {
        let t = EmbeddedTarget::sphere(3).unwrap();
        let c = MapField::constant(d, &t, &[1.0, 0.0, 0.0]).unwrap();
        Arc::new(c.perturbed(amp, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
    }

    fn torus_map(d: &TorusDomain, seed: u64) -> Arc<MapField> {
        let t = torus_target();
        let c = MapField::torus_angles(d, &t, |x, y| (x + 0.3, 0.2 * y.sin())).unwrap();
        Arc::new(c.perturbed(0.1, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
    }

    #[test]
    fn constant_map_spectrum_is_n_copies() {
        let d = TorusDomain::square(8, AA).unwrap();
        for t in [torus_target(), EmbeddedTarget::sphere(3).unwrap(), EmbeddedTarget::sphere(4).unwrap()] {
            let p: Vec<f64> = match t.kind {
                crate::target::TargetKind::CliffordTorus { .. } => vec![1.0, 0.0, 0.0, 1.0],
                _ => {
                    let mut p = vec![0.0; t.ambient_dim];
                    p[0] = 1.0;
                    p
                }
            };
            let u = Arc::new(MapField::constant(&d, &t, &p).unwrap());
            let op = TwistedDirac::new(&u, Block::Full).unwrap();
            let sd = op.spectrum().unwrap();
            let want = analytic_spectrum(&d, 20);
            let n = t.intrinsic_dim;
            for (lam, mult) in want {
                let got = sd.eigenvalues.iter().filter(|v| (*v - lam).abs() < 1e-10).count();
                assert_eq!(got, mult * n, "λ = {lam}");
            }
        }
    }

    #[test]
    fn matrix_free_matches_assembled() {
        let d = TorusDomain::square(8, PP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (u, block) in [
            (sphere_map(&d, 0.3, 2), Block::Full),
            (sphere_map(&d, 0.3, 3), Block::TypeOneZero),
            (torus_map(&d, 4), Block::Full),
        ] {
            let op = TwistedDirac::new(&u, block).unwrap();
            let dm = op.assemble();
            assert!(dm.hermiticity_defect() < 1e-10);
            assert!(dm.projector_commutation_defect() < 1e-9);
            for _ in 0..5 {
                let psi = TwistedSpinorField::random_tangential(&u, &mut rng);
                let psi = if block == Block::TypeOneZero { TwistedDirac::split_10_01(&u, &psi).unwrap().0 } else { psi };
                let a = op.apply_dirac(&psi).unwrap();
                let b = dm.apply(&psi);
                assert!(linalg::max_abs_diff(&a.values, &b.values) < 1e-10);
                assert!(a.tangency_residual() < 1e-9);
                let e = psi.l2_inner(&a);
                assert!(e.im.abs() < 1e-10 * e.norm().max(1.0));
            }
        }
    }

    #[test]
    fn non_tangential_input_rejected() {
        let d = TorusDomain::square(8, PP).unwrap();
        let u = sphere_map(&d, 0.2, 5);
        let op = TwistedDirac::new(&u, Block::Full).unwrap();
        let mut psi = TwistedSpinorField::zeros(&u);
        for k in 0..d.n_sites() {
            for a in 0..3 {
                psi.values[(k * 3 + a) * 2] = C64::new(u.site(k)[a], 0.0);
            }
        }
        assert!(matches!(op.apply_dirac(&psi), Err(Error::TangencyViolation { .. })));
    }

    #[test]
    fn constant_frame_spinor_is_harmonic() {
        let d = TorusDomain::square(8, PP).unwrap();
        let u = Arc::new(MapField::constant(&d, &torus_target(), &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let op = TwistedDirac::new(&u, Block::Full).unwrap();
        let mut x = vec![ZERO; op.dim()];
        for k in 0..d.n_sites() {
            x[k * 4] = C64::new(1.0, 0.0);
        }
        let psi = op.expand(&x);
        assert!(op.apply_dirac(&psi).unwrap().c0_norm() < 1e-12);
    }

    #[test]
    fn splitting_properties() {
        let d = TorusDomain::square(8, AA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = torus_map(&d, 8);
        let psi = TwistedSpinorField::random_tangential(&u, &mut rng);
        let (a, b) = TwistedDirac::split_10_01(&u, &psi).unwrap();
        assert!((psi.l2_norm().powi(2) - a.l2_norm().powi(2) - b.l2_norm().powi(2)).abs() < 1e-10);
        let (aa, ab) = TwistedDirac::split_10_01(&u, &a).unwrap();
        assert!(linalg::max_abs_diff(&aa.values, &a.values) < 1e-12 && ab.c0_norm() < 1e-12);
        let full = TwistedDirac::new(&u, Block::Full).unwrap();
        let da = full.apply_dirac(&a).unwrap();
        let (_, leak) = TwistedDirac::split_10_01(&u, &da).unwrap();
        assert!(leak.l2_norm() < 1e-8 * psi.l2_norm());
        let s = sphere_map(&d, 0.3, 9);
        let op10 = TwistedDirac::new(&s, Block::TypeOneZero).unwrap();
        let full = TwistedDirac::new(&s, Block::Full).unwrap();
        let psi = TwistedSpinorField::random_tangential(&s, &mut rng);
        let (a, _) = TwistedDirac::split_10_01(&s, &psi).unwrap();
        let x = full.apply_dirac(&a).unwrap();
        let y = op10.apply_dirac(&a).unwrap();
        assert!(linalg::max_abs_diff(&x.values, &y.values) < 1e-10);
        let t2 = EmbeddedTarget::sphere(4).unwrap();
        let u4 = Arc::new(MapField::constant(&d, &t2, &[1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(TwistedDirac::split_10_01(&u4, &TwistedSpinorField::zeros(&u4)), Err(Error::StructureUnavailable(_))));
    }

    #[test]
    fn quaternionic_structure() {
        let d = TorusDomain::square(8, AA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = torus_map(&d, 12);
        let op = TwistedDirac::new(&u, Block::TypeOneZero).unwrap();
        let psi = TwistedSpinorField::random_tangential(&u, &mut rng);
        let (a, _) = TwistedDirac::split_10_01(&u, &psi).unwrap();
        let ja = TwistedDirac::quaternionic_j(&u, &a).unwrap();
        let jja = TwistedDirac::quaternionic_j(&u, &ja).unwrap();
        assert!(linalg::max_abs_diff(&jja.values, &a.scaled(C64::new(-1.0, 0.0)).values) < 1e-14);
        let i = C64::new(0.0, 1.0);
        let jia = TwistedDirac::quaternionic_j(&u, &a.scaled(i)).unwrap();
        assert!(linalg::max_abs_diff(&jia.values, &ja.scaled(-i).values) < 1e-14);
        let (_, leak) = TwistedDirac::split_10_01(&u, &ja).unwrap();
        assert!(leak.c0_norm() < 1e-12);
        assert!(op.j_commutation_defect(4, &mut rng).unwrap() < 1e-8);
        let sd = op.spectrum().unwrap();
        assert!(sd.even_multiplicity());
        assert!(sd.symmetry_defect() < 1e-8);
        let s = sphere_map(&d, 0.2, 3);
        let ops = TwistedDirac::new(&s, Block::TypeOneZero).unwrap();
        assert!(matches!(ops.j_commutation_defect(1, &mut rng), Err(Error::StructureUnavailable(_))));
    }

    #[test]
    fn kernel_counts_and_gaps() {
        let pp = TorusDomain::square(8, PP).unwrap();
        let aa = TorusDomain::square(8, AA).unwrap();
        let t = torus_target();
        let u = Arc::new(MapField::constant(&aa, &t, &[1.0, 0.0, 1.0, 0.0]).unwrap());
        let sd = TwistedDirac::new(&u, Block::Full).unwrap().spectrum().unwrap();
        assert_eq!(sd.kernel_count, Some(0));
        assert!((sd.gap.unwrap() - 0.5 / 2f64.sqrt()).abs() < 1e-12);
        let u = Arc::new(MapField::constant(&pp, &t, &[1.0, 0.0, 1.0, 0.0]).unwrap());
        let op = TwistedDirac::new(&u, Block::Full).unwrap();
        assert_eq!(op.kernel_dimension(0.5).unwrap(), 4);
        assert!(matches!(op.kernel_dimension(100.0), Err(Error::AmbiguousCluster(_))));
        let op10 = TwistedDirac::new(&u, Block::TypeOneZero).unwrap();
        let sd = op10.eigen_solve(10).unwrap();
        assert_eq!(sd.kernel_count, Some(2));
        let g = sd.eigenvectors.adjoint() * &sd.eigenvectors;
        assert!(linalg::cmax_abs(&(g - DMatrix::identity(10, 10))) < 1e-9);
    }

    #[test]
    fn projections_agree() {
        let d = TorusDomain::square(8, PP).unwrap();
        let u = sphere_map(&d, 0.02, 21);
        let op = TwistedDirac::new(&u, Block::Full).unwrap();
        let sd = op.spectrum().unwrap();
        let lam = sd.gap.unwrap();
        assert_eq!(sd.kernel_count, Some(4));
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let psi = TwistedSpinorField::random_tangential(&u, &mut rng);
        let pe = op.project_kernel_eigen(&psi, lam).unwrap();
        let p16 = op.project_kernel_contour(&psi, lam, 16).unwrap();
        let p32 = op.project_kernel_contour(&psi, lam, 32).unwrap();
        assert!(pe.sub(&p16).c0_norm() < 1e-8);
        assert!(pe.sub(&p32).c0_norm() < 1e-10);
        assert!(pe.l2_norm() <= psi.l2_norm());
        let ppe = op.project_kernel_eigen(&pe, lam).unwrap();
        assert!(ppe.sub(&pe).c0_norm() < 1e-12);
        let rest = psi.sub(&pe);
        assert!(op.project_kernel_eigen(&rest, lam).unwrap().c0_norm() < 1e-9);
        let hit = 2.0 * sd.eigenvalues[4].abs();
        assert!(matches!(op.project_kernel_contour(&psi, hit, 16), Err(Error::ContourHitsSpectrum { .. })));
    }
}
