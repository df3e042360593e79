//! The flat torus `R^2 / (L1 Z × L2 Z)` with a spin structure, plain spinor
//! fields, Clifford multiplication, the untwisted Dirac operator and the
//! chirality grading.
//!
//! Clifford generators are `e1 = [[0, i], [i, 0]]` and `e2 = [[0, 1], [-1, 0]]`.
//! Both are anti-Hermitian, square to `-1` and anticommute. The grading
//! `G = i e1 e2` is `diag(1, -1)`.
//!
//! Antiperiodic directions use half-integer Fourier frequencies: a field
//! with shift `s` is stored by its values on the grid and differentiated
//! through `exp(-2πi s j/N)`-twisted transforms, so the Dirac operator is
//! exactly diagonal in the shifted plane-wave basis.

use crate::error::{Error, Result};
use crate::C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Antiperiodic,
}

impl Boundary {
    pub fn shift(self) -> f64 {
        match self {
            Boundary::Periodic => 0.0,
            Boundary::Antiperiodic => 0.5,
        }
    }
}

struct Plans {
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
    /// `exp(-2πi (sx ix/nx + sy iy/ny))` per site.
    twist: Vec<C64>,
}

#[derive(Clone)]
pub struct TorusDomain {
    pub l1: f64,
    pub l2: f64,
    pub nx: usize,
    pub ny: usize,
    pub spin: [Boundary; 2],
    plans: Arc<Plans>,
}

impl fmt::Debug for TorusDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusDomain")
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("spin", &self.spin)
            .finish()
    }
}

impl PartialEq for TorusDomain {
    fn eq(&self, o: &Self) -> bool {
        self.l1 == o.l1 && self.l2 == o.l2 && self.nx == o.nx && self.ny == o.ny && self.spin == o.spin
    }
}

/// Which derivative a real spectral operator computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deriv {
    Dx,
    Dy,
    Dxx,
    Dyy,
    Dxy,
    Laplacian,
}

impl TorusDomain {
    pub fn new(l1: f64, l2: f64, nx: usize, ny: usize, spin: [Boundary; 2]) -> Result<Self> {
        if nx < 4 || ny < 4 || nx % 2 == 1 || ny % 2 == 1 {
            return Err(Error::InvalidInput(format!("grid {nx}x{ny} must be even and at least 4")));
        }
        if !(l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(Error::InvalidInput(format!("side lengths must be positive, got {l1}, {l2}")));
        }
        let mut planner = FftPlanner::new();
        let (sx, sy) = (spin[0].shift(), spin[1].shift());
        let twist = (0..nx * ny)
            .map(|k| {
                let (ix, iy) = (k / ny, k % ny);
                C64::from_polar(1.0, -2.0 * PI * (sx * ix as f64 / nx as f64 + sy * iy as f64 / ny as f64))
            })
            .collect();
        let plans = Plans {
            fx: planner.plan_fft_forward(nx),
            ix: planner.plan_fft_inverse(nx),
            fy: planner.plan_fft_forward(ny),
            iy: planner.plan_fft_inverse(ny),
            twist,
        };
        Ok(TorusDomain { l1, l2, nx, ny, spin, plans: Arc::new(plans) })
    }

    /// `2π × 2π` torus on an `n × n` grid.
    pub fn square(n: usize, spin: [Boundary; 2]) -> Result<Self> {
        Self::new(2.0 * PI, 2.0 * PI, n, n, spin)
    }

    pub fn n_sites(&self) -> usize {
        self.nx * self.ny
    }

    pub fn volume(&self) -> f64 {
        self.l1 * self.l2
    }

    pub fn cell_area(&self) -> f64 {
        self.volume() / self.n_sites() as f64
    }

    pub fn site(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn position(&self, site: usize) -> (f64, f64) {
        let (ix, iy) = (site / self.ny, site % self.ny);
        (ix as f64 * self.l1 / self.nx as f64, iy as f64 * self.l2 / self.ny as f64)
    }

    pub fn with_spin(&self, spin: [Boundary; 2]) -> Self {
        Self::new(self.l1, self.l2, self.nx, self.ny, spin).expect("same grid is valid")
    }

    /// Integer wavenumber of FFT bin `j` (`j - n` above the midpoint).
    pub fn wavenumber(j: usize, n: usize) -> i64 {
        if j < n / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Angular spinor frequencies `2π(k + s)/L` of bin `(jx, jy)`.
    pub fn spinor_frequency(&self, jx: usize, jy: usize) -> (f64, f64) {
        (
            2.0 * PI * (Self::wavenumber(jx, self.nx) as f64 + self.spin[0].shift()) / self.l1,
            2.0 * PI * (Self::wavenumber(jy, self.ny) as f64 + self.spin[1].shift()) / self.l2,
        )
    }

    /// Angular frequencies of a periodic field.
    pub fn field_frequency(&self, jx: usize, jy: usize) -> (f64, f64) {
        (
            2.0 * PI * Self::wavenumber(jx, self.nx) as f64 / self.l1,
            2.0 * PI * Self::wavenumber(jy, self.ny) as f64 / self.l2,
        )
    }

    fn fft2(&self, buf: &mut [C64], scratch: &mut [C64], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let p = &self.plans;
        if inverse { p.iy.process(buf) } else { p.fy.process(buf) }
        for ix in 0..nx {
            for iy in 0..ny {
                scratch[iy * nx + ix] = buf[ix * ny + iy];
            }
        }
        if inverse { p.ix.process(scratch) } else { p.fx.process(scratch) }
        for ix in 0..nx {
            for iy in 0..ny {
                buf[ix * ny + iy] = scratch[iy * nx + ix];
            }
        }
        if inverse {
            let s = 1.0 / (nx * ny) as f64;
            buf.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Fourier coefficients of a site-major field with `ncomp` components,
    /// returned component-major.
    pub(crate) fn forward(&self, data: &[C64], ncomp: usize, twisted: bool) -> Vec<C64> {
        let n = self.n_sites();
        let mut out = vec![C64::new(0.0, 0.0); n * ncomp];
        let mut scratch = vec![C64::new(0.0, 0.0); n];
        for c in 0..ncomp {
            let buf = &mut out[c * n..(c + 1) * n];
            for k in 0..n {
                buf[k] = data[k * ncomp + c];
                if twisted {
                    buf[k] *= self.plans.twist[k];
                }
            }
            self.fft2(buf, &mut scratch, false);
        }
        out
    }

    /// Inverse of [`Self::forward`].
    pub(crate) fn inverse(&self, mut spec: Vec<C64>, ncomp: usize, twisted: bool) -> Vec<C64> {
        let n = self.n_sites();
        let mut out = vec![C64::new(0.0, 0.0); n * ncomp];
        let mut scratch = vec![C64::new(0.0, 0.0); n];
        for c in 0..ncomp {
            let buf = &mut spec[c * n..(c + 1) * n];
            self.fft2(buf, &mut scratch, true);
            for k in 0..n {
                let v = if twisted { buf[k] * self.plans.twist[k].conj() } else { buf[k] };
                out[k * ncomp + c] = v;
            }
        }
        out
    }

    /// Flat Dirac operator applied independently to `r` spinors stored as
    /// `x[(site*r + a)*2 + s]`.
    pub(crate) fn dirac_multi(&self, x: &[C64], r: usize) -> Vec<C64> {
        let n = self.n_sites();
        let ncomp = 2 * r;
        let mut spec = self.forward(x, ncomp, true);
        for jx in 0..self.nx {
            for jy in 0..self.ny {
                let m = jx * self.ny + jy;
                let (k1, k2) = self.spinor_frequency(jx, jy);
                let s01 = C64::new(-k1, k2);
                let s10 = C64::new(-k1, -k2);
                for a in 0..r {
                    let (i0, i1) = ((2 * a) * n + m, (2 * a + 1) * n + m);
                    let (x0, x1) = (spec[i0], spec[i1]);
                    spec[i0] = s01 * x1;
                    spec[i1] = s10 * x0;
                }
            }
        }
        self.inverse(spec, ncomp, true)
    }

    /// Multiplies every spinor component by a radial Fourier symbol of the
    /// shifted frequency, e.g. a resolvent of the Laplacian.
    pub(crate) fn spinor_symbol(&self, x: &[C64], ncomp: usize, f: impl Fn(f64) -> f64) -> Vec<C64> {
        let n = self.n_sites();
        let mut spec = self.forward(x, ncomp, true);
        for jx in 0..self.nx {
            for jy in 0..self.ny {
                let m = jx * self.ny + jy;
                let (k1, k2) = self.spinor_frequency(jx, jy);
                let w = f(k1 * k1 + k2 * k2);
                for c in 0..ncomp {
                    spec[c * n + m] *= w;
                }
            }
        }
        self.inverse(spec, ncomp, true)
    }

    /// Spectral first derivatives of spinor components (shifted lattice).
    pub(crate) fn spinor_gradient(&self, x: &[C64], ncomp: usize) -> [Vec<C64>; 2] {
        let n = self.n_sites();
        let spec = self.forward(x, ncomp, true);
        let mut dx = spec.clone();
        let mut dy = spec;
        for jx in 0..self.nx {
            for jy in 0..self.ny {
                let m = jx * self.ny + jy;
                let (k1, k2) = self.spinor_frequency(jx, jy);
                for c in 0..ncomp {
                    dx[c * n + m] *= C64::new(0.0, k1);
                    dy[c * n + m] *= C64::new(0.0, k2);
                }
            }
        }
        [self.inverse(dx, ncomp, true), self.inverse(dy, ncomp, true)]
    }

    /// Spectral derivatives of a real periodic field with `ncomp` components
    /// per site. Odd derivatives drop the Nyquist bins; even ones keep them.
    pub fn real_derivatives(&self, f: &[f64], ncomp: usize, ops: &[Deriv]) -> Vec<Vec<f64>> {
        let n = self.n_sites();
        let data: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        let spec = self.forward(&data, ncomp, false);
        ops.iter()
            .map(|&op| {
                let mut s = spec.clone();
                for jx in 0..self.nx {
                    for jy in 0..self.ny {
                        let m = jx * self.ny + jy;
                        let (k1, k2) = self.field_frequency(jx, jy);
                        let nyx = jx == self.nx / 2;
                        let nyy = jy == self.ny / 2;
                        let w = match op {
                            Deriv::Dx if nyx => C64::new(0.0, 0.0),
                            Deriv::Dx => C64::new(0.0, k1),
                            Deriv::Dy if nyy => C64::new(0.0, 0.0),
                            Deriv::Dy => C64::new(0.0, k2),
                            Deriv::Dxx => C64::new(-k1 * k1, 0.0),
                            Deriv::Dyy => C64::new(-k2 * k2, 0.0),
                            Deriv::Dxy if nyx || nyy => C64::new(0.0, 0.0),
                            Deriv::Dxy => C64::new(-k1 * k2, 0.0),
                            Deriv::Laplacian => C64::new(-(k1 * k1 + k2 * k2), 0.0),
                        };
                        for c in 0..ncomp {
                            s[c * n + m] *= w;
                        }
                    }
                }
                self.inverse(s, ncomp, false).into_iter().map(|z| z.re).collect()
            })
            .collect()
    }

    /// Applies a real radial symbol `g(|ξ|²)` to a real periodic field.
    pub fn real_symbol(&self, f: &[f64], ncomp: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n_sites();
        let data: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        let mut spec = self.forward(&data, ncomp, false);
        for jx in 0..self.nx {
            for jy in 0..self.ny {
                let m = jx * self.ny + jy;
                let (k1, k2) = self.field_frequency(jx, jy);
                let w = g(k1 * k1 + k2 * k2);
                for c in 0..ncomp {
                    spec[c * n + m] *= w;
                }
            }
        }
        self.inverse(spec, ncomp, false).into_iter().map(|z| z.re).collect()
    }

    /// Largest radius `R` such that every continuum eigenvalue `|λ| ≤ R` of
    /// the flat Dirac operator is represented on the grid.
    pub fn resolved_radius(&self) -> f64 {
        let rx = 2.0 * PI * (self.nx as f64 / 2.0 - 1.0 + self.spin[0].shift()) / self.l1;
        let ry = 2.0 * PI * (self.ny as f64 / 2.0 - 1.0 + self.spin[1].shift()) / self.l2;
        rx.min(ry)
    }
}

/// Clifford generators as row-major 2×2 complex matrices.
pub fn clifford_generators() -> [[C64; 4]; 2] {
    let (z, o, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    [[z, i, i, z], [z, o, -o, z]]
}

/// Clifford multiplication `X · σ` by a frame vector `X = X1 e1 + X2 e2`.
pub fn clifford_mul(x: [f64; 2], s: [C64; 2]) -> [C64; 2] {
    let i = C64::new(0.0, 1.0);
    [i * x[0] * s[1] + x[1] * s[1], i * x[0] * s[0] - x[1] * s[0]]
}

/// `e_beta · σ` for `beta ∈ {0, 1}`.
pub(crate) fn clifford_basis(beta: usize, s: [C64; 2]) -> [C64; 2] {
    if beta == 0 {
        clifford_mul([1.0, 0.0], s)
    } else {
        clifford_mul([0.0, 1.0], s)
    }
}

/// Chirality grading `G = i e1 e2 = diag(1, -1)`.
pub fn grading_g(s: [C64; 2]) -> [C64; 2] {
    [s[0], -s[1]]
}

/// Quaternionic structure on spinors, `j1(σ) = e2 · conj(σ)`. Antilinear,
/// squares to `-1` and commutes with Clifford multiplication.
pub fn quaternionic_j1(s: [C64; 2]) -> [C64; 2] {
    [s[1].conj(), -s[0].conj()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinorField {
    pub domain: TorusDomain,
    /// `values[2*site + s]`.
    pub values: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainVectorField {
    pub domain: TorusDomain,
    /// Frame coefficients per site.
    pub values: Vec<[f64; 2]>,
}

impl DomainVectorField {
    /// Spectral gradient of a real periodic scalar.
    pub fn gradient(domain: &TorusDomain, f: &[f64]) -> Self {
        let d = domain.real_derivatives(f, 1, &[Deriv::Dx, Deriv::Dy]);
        DomainVectorField { domain: domain.clone(), values: d[0].iter().zip(&d[1]).map(|(a, b)| [*a, *b]).collect() }
    }
}

impl SpinorField {
    pub fn zeros(domain: &TorusDomain) -> Self {
        SpinorField { domain: domain.clone(), values: vec![C64::new(0.0, 0.0); 2 * domain.n_sites()] }
    }

    pub fn from_fn(domain: &TorusDomain, f: impl Fn(f64, f64) -> [C64; 2]) -> Self {
        let mut out = Self::zeros(domain);
        for k in 0..domain.n_sites() {
            let (x, y) = domain.position(k);
            let v = f(x, y);
            out.values[2 * k] = v[0];
            out.values[2 * k + 1] = v[1];
        }
        out
    }

    /// Plane wave `exp(i ξ·x) σ` at the shifted frequency of bin `(jx, jy)`.
    pub fn plane_wave(domain: &TorusDomain, jx: usize, jy: usize, s: [C64; 2]) -> Self {
        let (k1, k2) = domain.spinor_frequency(jx, jy);
        Self::from_fn(domain, |x, y| {
            let e = C64::from_polar(1.0, k1 * x + k2 * y);
            [e * s[0], e * s[1]]
        })
    }

    pub fn map_sites(&self, f: impl Fn([C64; 2]) -> [C64; 2]) -> Self {
        let mut out = self.clone();
        for k in 0..self.domain.n_sites() {
            let v = f([self.values[2 * k], self.values[2 * k + 1]]);
            out.values[2 * k] = v[0];
            out.values[2 * k + 1] = v[1];
        }
        out
    }
}

pub fn dirac_plain(psi: &SpinorField) -> SpinorField {
    SpinorField { domain: psi.domain.clone(), values: psi.domain.dirac_multi(&psi.values, 1) }
}

pub fn grading(psi: &SpinorField) -> SpinorField {
    psi.map_sites(grading_g)
}

/// `∫ <ψ, φ>` by cell-area quadrature (conjugate-linear in `ψ`).
pub fn l2_inner(psi: &SpinorField, phi: &SpinorField) -> C64 {
    crate::linalg::cdot(&psi.values, &phi.values) * psi.domain.cell_area()
}

/// `(∫ |ψ|^p + |∇ψ|^p)^{1/p}` with spectral derivatives.
pub fn w1p_norm(psi: &SpinorField, p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("exponent {p} must lie in (1, ∞)")));
    }
    let d = &psi.domain;
    let [gx, gy] = d.spinor_gradient(&psi.values, 2);
    let mut acc = 0.0;
    for k in 0..d.n_sites() {
        let v: f64 = (0..2).map(|s| psi.values[2 * k + s].norm_sqr()).sum();
        let g: f64 = (0..2).map(|s| gx[2 * k + s].norm_sqr() + gy[2 * k + s].norm_sqr()).sum();
        acc += v.powf(p / 2.0) + g.powf(p / 2.0);
    }
    Ok((acc * d.cell_area()).powf(1.0 / p))
}

/// Smallest continuum eigenvalues `±2π|(k + s)/L|` of the flat Dirac
/// operator: at least `cutoff` eigenvalues counted with multiplicity,
/// completed to whole clusters, as `(λ, multiplicity)` sorted by `|λ|`
/// then `λ`.
pub fn analytic_spectrum(domain: &TorusDomain, cutoff: usize) -> Vec<(f64, usize)> {
    if cutoff == 0 {
        return Vec::new();
    }
    let (s1, s2) = (domain.spin[0].shift(), domain.spin[1].shift());
    let mut kmax = 1i64;
    loop {
        let mut mags = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                let a = 2.0 * PI * (k1 as f64 + s1) / domain.l1;
                let b = 2.0 * PI * (k2 as f64 + s2) / domain.l2;
                mags.push((a * a + b * b).sqrt());
            }
        }
        mags.sort_by(f64::total_cmp);
        // every lattice point with |ξ| below this radius lies in the box
        let safe = 2.0 * PI * (kmax as f64 - 0.5).max(0.0) / domain.l1.max(domain.l2);
        let inside: Vec<f64> = mags.iter().copied().filter(|&m| m <= safe).collect();
        if 2 * inside.len() >= cutoff + 2 && !inside.is_empty() {
            let mut vals: Vec<f64> = inside.iter().flat_map(|&m| [m, -m]).collect();
            vals.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
            let last = vals[cutoff - 1].abs();
            let tol = 1e-10 + 1e-8 * last;
            if inside.last().map_or(false, |&m| m > last + tol) {
                let mut out: Vec<(f64, usize)> = Vec::new();
                for v in vals.into_iter().filter(|v| v.abs() <= last + tol) {
                    match out.last_mut() {
                        Some((l, c)) if (v - *l).abs() <= 1e-10 + 1e-8 * v.abs() => *c += 1,
                        _ => out.push((v, 1)),
                    }
                }
                return out;
            }
        }
        kmax *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cdot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL_SPINS: [[Boundary; 2]; 4] = [
        [Boundary::Periodic, Boundary::Periodic],
        [Boundary::Periodic, Boundary::Antiperiodic],
        [Boundary::Antiperiodic, Boundary::Periodic],
        [Boundary::Antiperiodic, Boundary::Antiperiodic],
    ];

    fn rand_spinor(rng: &mut ChaCha8Rng) -> [C64; 2] {
        [C64::new(rng.random(), rng.random()), C64::new(rng.random(), rng.random())]
    }

    fn rand_field(d: &TorusDomain, rng: &mut ChaCha8Rng) -> SpinorField {
        let mut f = SpinorField::zeros(d);
        f.values.iter_mut().for_each(|v| *v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        f
    }

    fn herm(a: [C64; 2], b: [C64; 2]) -> C64 {
        a[0].conj() * b[0] + a[1].conj() * b[1]
    }

    #[test]
    fn clifford_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = rand_spinor(&mut rng);
            let t = rand_spinor(&mut rng);
            let e1 = |v| clifford_basis(0, v);
            let e2 = |v| clifford_basis(1, v);
            let a = e1(e1(s));
            assert!((a[0] + s[0]).norm() < 1e-15 && (a[1] + s[1]).norm() < 1e-15);
            let a = e2(e2(s));
            assert!((a[0] + s[0]).norm() < 1e-15 && (a[1] + s[1]).norm() < 1e-15);
            let (x, y) = (e1(e2(s)), e2(e1(s)));
            assert!((x[0] + y[0]).norm() < 1e-15 && (x[1] + y[1]).norm() < 1e-15);
            assert!((herm(e1(s), t) + herm(s, e1(t))).norm() < 1e-15);
            assert!((herm(e2(s), t) + herm(s, e2(t))).norm() < 1e-15);
        }
    }

    #[test]
    fn grading_is_i_e1_e2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = rand_spinor(&mut rng);
        let i = C64::new(0.0, 1.0);
        let prod = clifford_basis(0, clifford_basis(1, s));
        let g = grading_g(s);
        assert!((i * prod[0] - g[0]).norm() < 1e-15 && (i * prod[1] - g[1]).norm() < 1e-15);
        let gg = grading_g(g);
        assert_eq!(gg, s);
        let a = grading_g(clifford_basis(0, s));
        let b = clifford_basis(0, grading_g(s));
        assert!((a[0] + b[0]).norm() < 1e-15 && (a[1] + b[1]).norm() < 1e-15);
    }

    #[test]
    fn j1_commutes_with_clifford() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_spinor(&mut rng);
        let jj = quaternionic_j1(quaternionic_j1(s));
        assert!((jj[0] + s[0]).norm() < 1e-15 && (jj[1] + s[1]).norm() < 1e-15);
        for beta in 0..2 {
            let a = quaternionic_j1(clifford_basis(beta, s));
            let b = clifford_basis(beta, quaternionic_j1(s));
            assert!((a[0] - b[0]).norm() < 1e-15 && (a[1] - b[1]).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_spinor_is_harmonic_on_periodic_torus() {
        let d = TorusDomain::square(8, ALL_SPINS[0]).unwrap();
        let psi = SpinorField::from_fn(&d, |_, _| [C64::new(0.3, 0.1), C64::new(-0.2, 0.5)]);
        assert!(dirac_plain(&psi).values.iter().all(|v| v.norm() < 1e-13));
    }

    #[test]
    fn plane_waves_are_eigenvectors() {
        for spin in ALL_SPINS {
            let d = TorusDomain::new(2.0 * PI, 3.0, 8, 6, spin).unwrap();
            for (jx, jy) in [(1, 2), (5, 0), (4, 3), (0, 0)] {
                let (k1, k2) = d.spinor_frequency(jx, jy);
                let m = (k1 * k1 + k2 * k2).sqrt();
                if m == 0.0 {
                    continue;
                }
                // eigenvector of the symbol [[0, -k1 + i k2], [-k1 - i k2, 0]]
                for sign in [1.0, -1.0] {
                    let s = [C64::new(-k1, k2) / m, C64::new(sign, 0.0)];
                    let psi = SpinorField::plane_wave(&d, jx, jy, s);
                    let dpsi = dirac_plain(&psi);
                    let err = crate::linalg::max_abs_diff(
                        &dpsi.values,
                        &psi.values.iter().map(|v| v * (sign * m)).collect::<Vec<_>>(),
                    );
                    assert!(err < 1e-12, "{spin:?} ({jx},{jy}) err {err}");
                }
            }
        }
    }

    #[test]
    fn dirac_is_self_adjoint_and_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for spin in ALL_SPINS {
            let d = TorusDomain::square(8, spin).unwrap();
            let psi = rand_field(&d, &mut rng);
            let phi = rand_field(&d, &mut rng);
            let a = l2_inner(&dirac_plain(&psi), &phi);
            let b = l2_inner(&psi, &dirac_plain(&phi));
            assert!((a - b).norm() < 1e-10);
            let plus = psi.map_sites(|s| [s[0], C64::new(0.0, 0.0)]);
            assert!(dirac_plain(&plus).values.iter().step_by(2).all(|v| v.norm() < 1e-12));
        }
    }

    #[test]
    fn analytic_spectrum_examples() {
        let pp = TorusDomain::square(8, ALL_SPINS[0]).unwrap();
        let s = analytic_spectrum(&pp, 2);
        assert_eq!(s, vec![(0.0, 2)]);
        let aa = TorusDomain::square(8, ALL_SPINS[3]).unwrap();
        let s = analytic_spectrum(&aa, 1);
        assert!((s[0].0.abs() - 0.5f64.sqrt()).abs() < 1e-15);
        let s = analytic_spectrum(&aa, 40);
        let total: usize = s.iter().map(|x| x.1).sum();
        assert!(total >= 40);
        for &(v, m) in &s {
            let mirror = s.iter().find(|(w, _)| (w + v).abs() < 1e-12).expect("symmetric");
            assert_eq!(mirror.1, m);
        }
    }

    #[test]
    fn norms() {
        let d = TorusDomain::square(8, ALL_SPINS[0]).unwrap();
        let one = SpinorField::from_fn(&d, |_, _| [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!((l2_inner(&one, &one).re - 4.0 * PI * PI).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = rand_field(&d, &mut rng);
        let n = l2_inner(&f, &f);
        assert!(n.re >= 0.0 && n.im.abs() < 1e-14 * n.re);
        for p in [1.5, 2.0, 3.0] {
            for (jx, jy) in [(0, 1), (2, 1), (3, 3)] {
                let w = SpinorField::plane_wave(&d, jx, jy, [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
                let (k1, k2) = d.spinor_frequency(jx, jy);
                let k = (k1 * k1 + k2 * k2).sqrt();
                let exact = (d.volume() * (1.0 + k.powf(p))).powf(1.0 / p);
                assert!((w1p_norm(&w, p).unwrap() - exact).abs() < 1e-10 * exact);
            }
        }
        assert!(w1p_norm(&one, 1.0).is_err());
        assert!(cdot(&one.values, &one.values).re > 0.0);
    }

    #[test]
    fn real_derivatives_of_trig() {
        let d = TorusDomain::new(2.0 * PI, 4.0, 8, 8, ALL_SPINS[3]).unwrap();
        let f: Vec<f64> = (0..d.n_sites())
            .map(|k| {
                let (x, y) = d.position(k);
                (2.0 * x).sin() * (2.0 * PI * y / 4.0).cos()
            })
            .collect();
        let out = d.real_derivatives(&f, 1, &[Deriv::Dx, Deriv::Laplacian]);
        let w = 2.0 * PI / 4.0;
        for k in 0..d.n_sites() {
            let (x, y) = d.position(k);
            assert!((out[0][k] - 2.0 * (2.0 * x).cos() * (w * y).cos()).abs() < 1e-12);
            assert!((out[1][k] + (4.0 + w * w) * f[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusDomain::square(7, ALL_SPINS[0]).is_err());
        assert!(TorusDomain::square(2, ALL_SPINS[0]).is_err());
        assert!(TorusDomain::new(0.0, 1.0, 8, 8, ALL_SPINS[0]).is_err());
    }
}
