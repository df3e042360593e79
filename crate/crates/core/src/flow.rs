//! Heat flow for α-Dirac-harmonic maps with the spinor constrained to the
//! near-kernel of the twisted operator.
//!
//! The map evolves by
//!
//! `∂_t u = Δu + 2(α-1) ∇²u(∇u,∇u)ᵗ/(1+|∇u|²) + F₁(u) + F₂(u,ψ)/(α(1+|∇u|²)^{α-1})`
//!
//! integrated with exponential Euler (exact heat semigroup for `Δ`, explicit
//! remainder) followed by nearest-point reprojection. On the flat Clifford
//! torus the same scheme runs in angle coordinates, where `Δ` is the whole
//! linear part and the uncoupled `α = 1` flow is the heat semigroup per mode. After each step the
//! spinor is recomputed by transporting the anchor spinor to the new map and
//! projecting onto the near-kernel.

use crate::domain::{clifford_basis, Deriv};
use crate::error::{Error, Result};
use crate::lobpcg::{self, LobpcgOptions};
use crate::target::TargetKind;
use crate::transport::{constraint_spinor_with, kernel_spinor, TransportContext};
use crate::twisted::{Block, MapField, SpectralData, TwistedDirac, TwistedSpinorField, TANGENCY_LIMIT};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// How the kernel threshold `Λ` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Half the first eigenvalue magnitude above the initial near-zero cluster.
    HalfInitialGap,
    Fixed(f64),
}

/// Initial spinor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpinorInit {
    /// `ψ ≡ 0`: the uncoupled α-harmonic map flow.
    Zero,
    /// Eigenvector `index` of the initial near-kernel.
    Kernel { index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub alpha: f64,
    /// Exclusive upper bound for `α`.
    pub alpha_max: f64,
    pub dt: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub lambda: LambdaPolicy,
    pub reproject: bool,
    pub tangency_tol: f64,
    pub el_tol: f64,
    /// Halt when `sup|∇u|` exceeds this.
    pub gradient_bound: f64,
    pub kernel_block: Block,
    /// Largest block dimension solved densely; larger operators use LOBPCG.
    pub dense_limit: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            alpha: 1.0,
            alpha_max: 1.5,
            dt: 1e-3,
            t_max: 1.0,
            max_steps: 1000,
            lambda: LambdaPolicy::HalfInitialGap,
            reproject: true,
            tangency_tol: 1e-9,
            el_tol: 1e-8,
            gradient_bound: 1e3,
            kernel_block: Block::Full,
            dense_limit: 300,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.alpha < self.alpha_max) {
            return Err(Error::Config(format!("alpha {} outside [1, {})", self.alpha, self.alpha_max)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if !self.reproject {
            return Err(Error::Config("maps are stored on the target; reprojection cannot be disabled".into()));
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::Config(format!("fixed threshold must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    KernelJump,
    Converged,
    MaxSteps,
    TubeExit,
    GradientBlowup,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowEvent {
    #[serde(rename = "event")]
    pub kind: EventKind,
    pub t: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// One trace line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "E_alpha")]
    pub energy_alpha: f64,
    /// `E_α(u_n) - E_α(u_0) + α Σ Δt ∫ w |Δu/Δt|²`.
    pub diss_residual: f64,
    pub kernel_dim: Option<usize>,
    /// Half the smallest computed `|λ|` at or above `Λ`.
    pub gap: Option<f64>,
    pub el_residual: f64,
    pub degree: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_bar_norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub step: usize,
    pub u: Arc<MapField>,
    /// `None` in the uncoupled mode.
    pub psi: Option<TwistedSpinorField>,
    pub spectral: Option<SpectralData>,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub records: Vec<StepRecord>,
    pub events: Vec<FlowEvent>,
    pub state: FlowState,
    pub lambda: Option<f64>,
    /// Number of times the transport anchor was moved.
    pub reanchors: usize,
}

impl FlowTrace {
    /// JSON lines: one record per step, then the events.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }
}

/// Weighted-sum of squares `∫ w |f|²` with `w ≡ 1` when `weights` is `None`.
fn integrate_sq(f: &[f64], q: usize, weights: Option<&[f64]>, cell: f64) -> f64 {
    f.chunks(q)
        .enumerate()
        .map(|(k, c)| weights.map_or(1.0, |w| w[k]) * c.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * cell
}

fn grad_sq(u: &MapField, grad: &[Vec<f64>; 2]) -> Vec<f64> {
    let q = u.q();
    (0..u.domain.n_sites())
        .map(|k| (0..2).map(|b| grad[b][k * q..(k + 1) * q].iter().map(|x| x * x).sum::<f64>()).sum())
        .collect()
}

/// `F₁^A = -π^A_{BC} ⟨∇u^B, ∇u^C⟩`.
pub fn f1_term(u: &MapField) -> Vec<f64> {
    let grad = u.gradient();
    f1_with(u, &grad)
}

fn f1_with(u: &MapField, grad: &[Vec<f64>; 2]) -> Vec<f64> {
    let q = u.q();
    let mut h = vec![0.0; q * q * q];
    let mut out = vec![0.0; u.values().len()];
    for k in 0..u.domain.n_sites() {
        u.target.proj_hessian_into(u.site(k), &mut h).expect("map values lie in the tube");
        for beta in 0..2 {
            let g = &grad[beta][k * q..(k + 1) * q];
            for a in 0..q {
                let mut v = 0.0;
                for b in 0..q {
                    for c in 0..q {
                        v += h[(a * q + b) * q + c] * g[b] * g[c];
                    }
                }
                out[k * q + a] -= v;
            }
        }
    }
    out
}

/// `F₂^A = -π^A_B π^C_{BD} π^C_{EF} ⟨ψ^D, ∇u^E · ψ^F⟩`.
pub fn f2_term(u: &MapField, psi: &TwistedSpinorField) -> Result<Vec<f64>> {
    let grad = u.gradient();
    f2_with(u, psi, &grad)
}

fn f2_with(u: &MapField, psi: &TwistedSpinorField, grad: &[Vec<f64>; 2]) -> Result<Vec<f64>> {
    if psi.basepoint.values() != u.values() {
        return Err(Error::InvalidInput("spinor does not live over this map".into()));
    }
    let res = psi.tangency_residual();
    if res > TANGENCY_LIMIT {
        return Err(Error::TangencyViolation { residual: res, limit: TANGENCY_LIMIT });
    }
    let q = u.q();
    let proj = u.projectors();
    let mut h = vec![0.0; q * q * q];
    let mut c = vec![0.0; 2 * q * q];
    let mut kmat = vec![0.0; q * q];
    let mut w = vec![0.0; q];
    let mut out = vec![0.0; u.values().len()];
    for k in 0..u.domain.n_sites() {
        u.target.proj_hessian_into(u.site(k), &mut h)?;
        let sp = |a: usize| [psi.values[(k * q + a) * 2], psi.values[(k * q + a) * 2 + 1]];
        for beta in 0..2 {
            for f in 0..q {
                let ef = clifford_basis(beta, sp(f));
                for d in 0..q {
                    let pd = sp(d);
                    c[(beta * q + d) * q + f] = (pd[0].conj() * ef[0] + pd[1].conj() * ef[1]).re;
                }
            }
        }
        // K^C_D = Σ_{E,F} π^C_{EF} Σ_β ∂_β u^E c_β[D][F]
        for cc in 0..q {
            for d in 0..q {
                let mut v = 0.0;
                for e in 0..q {
                    for f in 0..q {
                        let hv = h[(cc * q + e) * q + f];
                        if hv != 0.0 {
                            v += hv * (0..2).map(|b| grad[b][k * q + e] * c[(b * q + d) * q + f]).sum::<f64>();
                        }
                    }
                }
                kmat[cc * q + d] = v;
            }
        }
        for b in 0..q {
            w[b] = (0..q).map(|cc| (0..q).map(|d| h[(cc * q + b) * q + d] * kmat[cc * q + d]).sum::<f64>()).sum();
        }
        let p = &proj[k * q * q..(k + 1) * q * q];
        for a in 0..q {
            out[k * q + a] = -(0..q).map(|b| p[a * q + b] * w[b]).sum::<f64>();
        }
    }
    Ok(out)
}

/// Right-hand side of the flow, ambient-valued.
pub fn alpha_rhs(u: &MapField, psi: Option<&TwistedSpinorField>, alpha: f64) -> Result<Vec<f64>> {
    let q = u.q();
    let ns = u.domain.n_sites();
    let d = u.domain.real_derivatives(u.values(), q, &[Deriv::Dx, Deriv::Dy, Deriv::Dxx, Deriv::Dyy, Deriv::Dxy, Deriv::Laplacian]);
    let grad = [d[0].clone(), d[1].clone()];
    let g2 = grad_sq(u, &grad);
    let mut out = f1_with(u, &grad);
    for (o, l) in out.iter_mut().zip(&d[5]) {
        *o += l;
    }
    if alpha != 1.0 {
        for k in 0..ns {
            let s = |v: &Vec<f64>, a: usize| v[k * q + a];
            // Σ_{βγ} ∂_β∂_γ u^B ∂_β u^B ∂_γ u^A
            let mut hxx = 0.0;
            let mut hxy = 0.0;
            let mut hyy = 0.0;
            for b in 0..q {
                hxx += s(&d[2], b) * s(&d[0], b);
                hxy += s(&d[4], b) * s(&d[0], b);
                hyy += s(&d[3], b) * s(&d[1], b);
            }
            let hyx: f64 = (0..q).map(|b| s(&d[4], b) * s(&d[1], b)).sum();
            let f = 2.0 * (alpha - 1.0) / (1.0 + g2[k]);
            for a in 0..q {
                out[k * q + a] += f * ((hxx + hyx) * s(&d[0], a) + (hxy + hyy) * s(&d[1], a));
            }
        }
    }
    if let Some(psi) = psi {
        let f2 = f2_with(u, psi, &grad)?;
        for k in 0..ns {
            let w = alpha * (1.0 + g2[k]).powf(alpha - 1.0);
            for a in 0..q {
                out[k * q + a] += f2[k * q + a] / w;
            }
        }
    }
    Ok(out)
}

/// Dirichlet energy `½∫|du|²`.
pub fn energy(u: &MapField) -> f64 {
    let g2 = grad_sq(u, &u.gradient());
    0.5 * g2.iter().sum::<f64>() * u.domain.cell_area()
}

/// `½∫(1+|du|²)^α`.
pub fn energy_alpha(u: &MapField, alpha: f64) -> f64 {
    let g2 = grad_sq(u, &u.gradient());
    0.5 * g2.iter().map(|v| (1.0 + v).powf(alpha)).sum::<f64>() * u.domain.cell_area()
}

/// `E_α(u) + ½ Re∫⟨ψ, D ψ⟩` with the full twisted operator.
pub fn lagrangian(u: &Arc<MapField>, psi: &TwistedSpinorField, alpha: f64) -> Result<f64> {
    if psi.basepoint.values() != u.values() {
        return Err(Error::InvalidInput("spinor does not live over this map".into()));
    }
    let op = TwistedDirac::new(u, Block::Full)?;
    let dpsi = op.apply_dirac(psi)?;
    Ok(energy_alpha(u, alpha) + 0.5 * psi.l2_inner(&dpsi).re)
}

/// L² norm of the tangential part of [`alpha_rhs`].
pub fn el_residual(u: &MapField, psi: Option<&TwistedSpinorField>, alpha: f64) -> Result<f64> {
    let rhs = alpha_rhs(u, psi, alpha)?;
    let q = u.q();
    let proj = u.projectors();
    let mut tan = vec![0.0; rhs.len()];
    for k in 0..u.domain.n_sites() {
        for a in 0..q {
            tan[k * q + a] = (0..q).map(|b| proj[(k * q + a) * q + b] * rhs[k * q + b]).sum();
        }
    }
    Ok(integrate_sq(&tan, q, None, u.domain.cell_area()).sqrt())
}

/// Degree of a map into a surface target: the pulled-back normalized area
/// form, integrated and rounded. Returns the integer and the raw value.
pub fn degree(u: &MapField) -> Result<(i64, f64)> {
    let q = u.q();
    let [gx, gy] = u.gradient();
    let ns = u.domain.n_sites();
    let raw = match u.target.kind {
        TargetKind::UnitSphere { q: 3 } => {
            let mut s = 0.0;
            for k in 0..ns {
                let p = u.site(k);
                let (a, b) = (&gx[k * 3..k * 3 + 3], &gy[k * 3..k * 3 + 3]);
                let cr = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                s += p[0] * cr[0] + p[1] * cr[1] + p[2] * cr[2];
            }
            s * u.domain.cell_area() / (4.0 * PI)
        }
        TargetKind::CliffordTorus { .. } => {
            let mut s = 0.0;
            for k in 0..ns {
                let p = u.site(k);
                let dth = |o: usize, g: &[f64]| {
                    let r2 = p[o] * p[o] + p[o + 1] * p[o + 1];
                    (p[o] * g[k * q + o + 1] - p[o + 1] * g[k * q + o]) / r2
                };
                s += dth(0, &gx) * dth(2, &gy) - dth(0, &gy) * dth(2, &gx);
            }
            s * u.domain.cell_area() / (4.0 * PI * PI)
        }
        _ => return Err(Error::Unsupported("degree needs a two-dimensional target".into())),
    };
    let r = raw.round();
    if (raw - r).abs() > 0.1 {
        return Err(Error::DegenerateDegree { value: raw });
    }
    Ok((r as i64, raw))
}

/// Largest absolute dissipation residual over the trace.
pub fn dissipation_check(trace: &FlowTrace) -> f64 {
    trace.records.iter().map(|r| r.diss_residual.abs()).fold(0.0, f64::max)
}

/// `(1 - e^{-h k²}) / k²`, the exponential-Euler weight.
fn phi1(h: f64, k2: f64) -> f64 {
    let x = h * k2;
    if x < 1e-8 { h * (1.0 - 0.5 * x) } else { -(-x).exp_m1() / k2 }
}

/// Exponential Euler step on the flat Clifford torus in angle coordinates,
/// where the flow reads `∂_t θ_b = Δθ_b + 2(α-1) Σ_{βγ} (Σ_c r_c² ∂_β∂_γθ_c ∂_βθ_c) ∂_γθ_b / (1+|du|²)`.
/// The spinor term vanishes on a flat target. Angle gradients come from the
/// ambient components, so no lift of the angles is needed.
/// Angles of both factors split as `θ_b = φ_b + slope_b · (x, y)` with `φ_b`
/// periodic, by unwrapping along grid lines. Layout `[site*2 + b]`.
fn unwrapped_angles(u: &MapField) -> (Vec<f64>, [[f64; 2]; 2]) {
    let d = &u.domain;
    let (nx, ny) = (d.nx, d.ny);
    let wrap = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;
    let mut phi = vec![0.0; 2 * d.n_sites()];
    let mut slope = [[0.0; 2]; 2];
    for b in 0..2 {
        let theta = |ix: usize, iy: usize| {
            let p = u.site(ix * ny + iy);
            p[2 * b + 1].atan2(p[2 * b])
        };
        let mut un = vec![0.0; nx * ny];
        un[0] = theta(0, 0);
        for ix in 0..nx {
            if ix > 0 {
                un[ix * ny] = un[(ix - 1) * ny] + wrap(theta(ix, 0) - theta(ix - 1, 0));
            }
            for iy in 1..ny {
                un[ix * ny + iy] = un[ix * ny + iy - 1] + wrap(theta(ix, iy) - theta(ix, iy - 1));
            }
        }
        let close_x = un[(nx - 1) * ny] + wrap(theta(0, 0) - theta(nx - 1, 0)) - un[0];
        let close_y = un[ny - 1] + wrap(theta(0, 0) - theta(0, ny - 1)) - un[0];
        let (mx, my) = ((close_x / (2.0 * PI)).round(), (close_y / (2.0 * PI)).round());
        slope[b] = [2.0 * PI * mx / d.l1, 2.0 * PI * my / d.l2];
        for ix in 0..nx {
            for iy in 0..ny {
                let lin = 2.0 * PI * (mx * ix as f64 / nx as f64 + my * iy as f64 / ny as f64);
                phi[2 * (ix * ny + iy) + b] = un[ix * ny + iy] - lin;
            }
        }
    }
    (phi, slope)
}

fn flat_update(u: &MapField, alpha: f64, h: f64) -> Vec<f64> {
    let (r1, r2) = match u.target.kind {
        TargetKind::CliffordTorus { r1, r2 } => (r1, r2),
        _ => unreachable!("flat update on a curved target"),
    };
    let radii = [r1, r2];
    let d = &u.domain;
    let ns = d.n_sites();
    let (phi, slope) = unwrapped_angles(u);
    let der = d.real_derivatives(&phi, 2, &[Deriv::Dx, Deriv::Dy, Deriv::Dxx, Deriv::Dxy, Deriv::Dyy, Deriv::Laplacian]);
    let mut force = der[5].clone();
    if alpha != 1.0 {
        for k in 0..ns {
            let tx = [der[0][2 * k] + slope[0][0], der[0][2 * k + 1] + slope[1][0]];
            let ty = [der[1][2 * k] + slope[0][1], der[1][2 * k + 1] + slope[1][1]];
            let g2: f64 = (0..2).map(|c| radii[c] * radii[c] * (tx[c].powi(2) + ty[c].powi(2))).sum();
            // Σ_c r_c² ∂_β∂_γθ_c ∂_βθ_c for γ = x, y
            let mut s = [0.0; 2];
            for c in 0..2 {
                let w = radii[c] * radii[c];
                let (txx, txy, tyy) = (der[2][2 * k + c], der[3][2 * k + c], der[4][2 * k + c]);
                s[0] += w * (txx * tx[c] + txy * ty[c]);
                s[1] += w * (txy * tx[c] + tyy * ty[c]);
            }
            let f = 2.0 * (alpha - 1.0) / (1.0 + g2);
            for b in 0..2 {
                force[2 * k + b] += f * (s[0] * tx[b] + s[1] * ty[b]);
            }
        }
    }
    let delta = d.real_symbol(&force, 2, |k2| phi1(h, k2));
    let mut out = vec![0.0; 4 * ns];
    for k in 0..ns {
        let p = u.site(k);
        for b in 0..2 {
            let (c, s) = (delta[2 * k + b].cos(), delta[2 * k + b].sin());
            let o = 2 * b;
            out[4 * k + o] = c * p[o] - s * p[o + 1];
            out[4 * k + o + 1] = s * p[o] + c * p[o + 1];
        }
    }
    out
}

struct SpinorTrack {
    psi: TwistedSpinorField,
    anchor: TwistedSpinorField,
    spectral: SpectralData,
    warm: Vec<Vec<C64>>,
    kernel_dim: usize,
    psi_bar_norm: f64,
}

/// Stepper holding the flow state and the running trace.
pub struct Flow {
    cfg: FlowConfig,
    lambda: Option<f64>,
    t: f64,
    step: usize,
    u: Arc<MapField>,
    spin: Option<SpinorTrack>,
    e_alpha0: f64,
    dissipated: f64,
    reanchors: usize,
    records: Vec<StepRecord>,
    events: Vec<FlowEvent>,
}

fn gap_above(sd: &SpectralData, lambda: f64) -> Option<f64> {
    sd.eigenvalues.iter().map(|v| v.abs()).filter(|&v| v >= lambda).fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.min(v)))
    }).map(|v| 0.5 * v)
}

impl Flow {
    pub fn new(u0: MapField, spinor: SpinorInit, cfg: FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let u = Arc::new(u0);
        let (spin, lambda) = match spinor {
            SpinorInit::Zero => (None, None),
            SpinorInit::Kernel { index } => {
                let op = TwistedDirac::new(&u, cfg.kernel_block)?;
                let sd = op.spectrum()?;
                let lambda = match cfg.lambda {
                    LambdaPolicy::HalfInitialGap => sd.spectral_gap()?,
                    LambdaPolicy::Fixed(l) => l,
                };
                let kernel_dim = sd.kernel_count(lambda)?;
                let psi = kernel_spinor(&op, &sd, lambda, index)?;
                let m = (kernel_dim + 4).min(op.dim());
                let warm = (0..m).map(|j| sd.eigenvectors.column(j).iter().copied().collect()).collect();
                let bar = 1.0;
                (
                    Some(SpinorTrack { anchor: psi.clone(), psi, spectral: sd, warm, kernel_dim, psi_bar_norm: bar }),
                    Some(lambda),
                )
            }
        };
        let e_alpha0 = energy_alpha(&u, cfg.alpha);
        let mut flow = Flow {
            cfg,
            lambda,
            t: 0.0,
            step: 0,
            u,
            spin,
            e_alpha0,
            dissipated: 0.0,
            reanchors: 0,
            records: Vec::new(),
            events: Vec::new(),
        };
        flow.record()?;
        Ok(flow)
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn state(&self) -> FlowState {
        FlowState {
            t: self.t,
            step: self.step,
            u: self.u.clone(),
            psi: self.spin.as_ref().map(|s| s.psi.clone()),
            spectral: self.spin.as_ref().map(|s| s.spectral.clone()),
        }
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn events(&self) -> &[FlowEvent] {
        &self.events
    }

    fn record(&mut self) -> Result<()> {
        let psi = self.spin.as_ref().map(|s| &s.psi);
        let e_alpha = energy_alpha(&self.u, self.cfg.alpha);
        let rec = StepRecord {
            t: self.t,
            energy: energy(&self.u),
            energy_alpha: e_alpha,
            diss_residual: e_alpha - self.e_alpha0 + self.dissipated,
            kernel_dim: self.spin.as_ref().map(|s| s.kernel_dim),
            gap: self.spin.as_ref().and_then(|s| gap_above(&s.spectral, self.lambda.unwrap_or(0.0))),
            el_residual: el_residual(&self.u, psi, self.cfg.alpha)?,
            degree: degree(&self.u).ok().map(|d| d.0),
            psi_bar_norm: self.spin.as_ref().map(|s| s.psi_bar_norm),
        };
        self.records.push(rec);
        Ok(())
    }

    fn event(&mut self, kind: EventKind, detail: String) -> FlowEvent {
        let e = FlowEvent { kind, t: self.t, detail };
        self.events.push(e.clone());
        e
    }

    fn solve_spectrum(&self, op: &TwistedDirac, warm: &[Vec<C64>], k: usize, lambda: f64) -> Result<(SpectralData, Vec<Vec<C64>>)> {
        let m = (k + 4).min(op.dim());
        if op.dim() <= self.cfg.dense_limit {
            let sd = op.spectrum()?;
            let block = (0..m).map(|j| sd.eigenvectors.column(j).iter().copied().collect()).collect();
            Ok((sd, block))
        } else {
            let cs = lobpcg::solve_cluster(op, warm, m, lambda, &LobpcgOptions::default())?;
            Ok((cs.spectral, cs.block))
        }
    }

    /// Advances one time step. Returns the event that halts the flow, if
    /// any; the state is left at the last accepted step.
    pub fn step(&mut self) -> Result<Option<FlowEvent>> {
        let cfg = self.cfg.clone();
        let u = self.u.clone();
        let q = u.q();
        let d = &u.domain;
        let h = cfg.dt;
        let raw = match u.target.kind {
            TargetKind::CliffordTorus { .. } => flat_update(&u, cfg.alpha, h),
            _ => {
                let psi = self.spin.as_ref().map(|s| &s.psi);
                let rhs = alpha_rhs(&u, psi, cfg.alpha)?;
                let lap = d.real_derivatives(u.values(), q, &[Deriv::Laplacian]).pop().unwrap();
                let nonlinear: Vec<f64> = rhs.iter().zip(&lap).map(|(r, l)| r - l).collect();
                let heat = d.real_symbol(u.values(), q, |k2| (-h * k2).exp());
                let phi = d.real_symbol(&nonlinear, q, |k2| phi1(h, k2));
                heat.iter().zip(&phi).map(|(a, b)| a + b).collect()
            }
        };
        let tube = u.target.tube_radius;
        let worst = raw.chunks(q).map(|z| u.target.distance_to_target(z)).fold(0.0, f64::max);
        if worst >= tube {
            return Ok(Some(self.event(EventKind::TubeExit, format!("distance {worst:.3e} to the target"))));
        }
        let unew = Arc::new(MapField::from_ambient(d, &u.target, &raw)?);
        let g2 = grad_sq(&unew, &unew.gradient());
        let gmax = g2.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
        if gmax > cfg.gradient_bound {
            return Ok(Some(self.event(EventKind::GradientBlowup, format!("sup|du| = {gmax:.3e}"))));
        }

        let mut new_spin = None;
        if let (Some(sp), Some(lambda)) = (self.spin.as_ref(), self.lambda) {
            let op = TwistedDirac::new(&unew, cfg.kernel_block)?;
            let (sd, warm) = match self.solve_spectrum(&op, &sp.warm, sp.kernel_dim, lambda) {
                Ok(v) => v,
                Err(Error::AmbiguousCluster(m)) => return Ok(Some(self.event(EventKind::KernelJump, m))),
                Err(e) => return Err(e),
            };
            let count = match sd.kernel_count(lambda) {
                Ok(c) => c,
                Err(Error::AmbiguousCluster(m)) => return Ok(Some(self.event(EventKind::KernelJump, m))),
                Err(e) => return Err(e),
            };
            if count > sp.kernel_dim {
                return Ok(Some(self.event(EventKind::KernelJump, format!("kernel {} -> {count}", sp.kernel_dim))));
            }
            let mut anchor = sp.anchor.clone();
            let ctx = match TransportContext::new(&anchor.basepoint, &unew) {
                Ok(c) => c,
                Err(Error::TransportRadius { .. }) => {
                    anchor = sp.psi.clone();
                    self.reanchors += 1;
                    TransportContext::new(&u, &unew)?
                }
                Err(e) => return Err(e),
            };
            let (psi_new, diag) = constraint_spinor_with(&ctx, &anchor, &op, &sd, lambda)?;
            let res = psi_new.tangency_residual();
            if res > cfg.tangency_tol {
                return Err(Error::TangencyViolation { residual: res, limit: cfg.tangency_tol });
            }
            new_spin = Some(SpinorTrack {
                psi: psi_new,
                anchor,
                spectral: sd,
                warm,
                kernel_dim: count,
                psi_bar_norm: diag.psi_bar_norm,
            });
        }

        let w: Vec<f64> = grad_sq(&u, &u.gradient()).iter().map(|v| (1.0 + v).powf(cfg.alpha - 1.0)).collect();
        let vel: Vec<f64> = unew.values().iter().zip(u.values()).map(|(a, b)| (a - b) / h).collect();
        self.dissipated += cfg.alpha * h * integrate_sq(&vel, q, Some(&w), d.cell_area());
        self.u = unew;
        if new_spin.is_some() {
            self.spin = new_spin;
        }
        self.t += h;
        self.step += 1;
        self.record()?;
        let el = self.records.last().unwrap().el_residual;
        if el <= cfg.el_tol {
            return Ok(Some(self.event(EventKind::Converged, format!("EL residual {el:.3e}"))));
        }
        if self.step >= cfg.max_steps || self.t >= cfg.t_max - 1e-12 * cfg.t_max {
            return Ok(Some(self.event(EventKind::MaxSteps, format!("{} steps", self.step))));
        }
        Ok(None)
    }

    pub fn run(mut self) -> Result<FlowTrace> {
        while self.step()?.is_none() {}
        Ok(self.finish())
    }

    pub fn finish(self) -> FlowTrace {
        let state = FlowState {
            t: self.t,
            step: self.step,
            u: self.u.clone(),
            psi: self.spin.as_ref().map(|s| s.psi.clone()),
            spectral: self.spin.as_ref().map(|s| s.spectral.clone()),
        };
        FlowTrace { records: self.records, events: self.events, state, lambda: self.lambda, reanchors: self.reanchors }
    }
}

/// Runs the flow from `u0` until an event halts it.
pub fn run(u0: MapField, spinor: SpinorInit, cfg: FlowConfig) -> Result<FlowTrace> {
    Flow::new(u0, spinor, cfg)?.run()
}

/// A restart map after a kernel jump: among `tries` random perturbations
/// of `u` with amplitudes halving from `amplitude`, the one with lowest
/// near-kernel dimension (then lowest `E_α`) whose `E_α` stays below that
/// of `u`. Returns the map with its kernel dimension.
pub fn restart_candidate<R: rand::Rng>(
    u: &MapField,
    cfg: &FlowConfig,
    amplitude: f64,
    tries: usize,
    rng: &mut R,
) -> Result<(MapField, usize)> {
    let ceiling = energy_alpha(u, cfg.alpha);
    let mut best: Option<(usize, f64, MapField)> = None;
    let mut amp = amplitude;
    for _ in 0..tries {
        let Ok(v) = u.perturbed(amp, 2, rng) else {
            amp *= 0.5;
            continue;
        };
        amp *= 0.5;
        let e = energy_alpha(&v, cfg.alpha);
        if e >= ceiling {
            continue;
        }
        let v = Arc::new(v);
        let sd = TwistedDirac::new(&v, cfg.kernel_block)?.spectrum()?;
        let lam = match cfg.lambda {
            LambdaPolicy::Fixed(l) => l,
            LambdaPolicy::HalfInitialGap => match sd.spectral_gap() {
                Ok(l) => l,
                Err(_) => continue,
            },
        };
        let Ok(dim) = sd.kernel_count(lam) else { continue };
        if best.as_ref().is_none_or(|b| (dim, e) < (b.0, b.1)) {
            best = Some((dim, e, (*v).clone()));
        }
    }
    best.map(|(d, _, v)| (v, d))
        .ok_or_else(|| Error::InvalidInput("no perturbation lowered the energy with a clean spectral gap".into()))
}
