//! Site-wise parallel transport of twisted spinors between nearby maps and
//! the constraint spinor: transport a unit kernel spinor from an anchor map
//! and project it onto the near-kernel of the operator over the new map.

use crate::error::{Error, Result};
use crate::twisted::{Block, MapField, SpectralData, TwistedDirac, TwistedSpinorField, TANGENCY_LIMIT};
use crate::C64;
use rand::Rng;
use serde::Serialize;
use std::sync::Arc;

/// Transport data from `source` to `dest`, one orthogonal ambient matrix
/// per site.
#[derive(Clone, Debug)]
pub struct TransportContext {
    pub source: Arc<MapField>,
    pub dest: Arc<MapField>,
    matrices: Vec<f64>,
    /// Largest site-wise geodesic distance.
    pub max_distance: f64,
}

impl TransportContext {
    /// Fails with `CutLocus` if some site pair reaches the injectivity
    /// radius and with `TransportRadius` if it reaches the target's `ε`.
    pub fn new(source: &Arc<MapField>, dest: &Arc<MapField>) -> Result<Self> {
        if source.domain != dest.domain || source.target != dest.target {
            return Err(Error::InvalidInput("transport needs maps on the same domain and target".into()));
        }
        let t = &source.target;
        let q = t.ambient_dim;
        let ns = source.domain.n_sites();
        let mut matrices = vec![0.0; ns * q * q];
        let mut max_distance = 0.0f64;
        for k in 0..ns {
            let (p, r) = (source.point(k), dest.point(k));
            max_distance = max_distance.max(t.geodesic_distance(&p, &r));
            t.transport_matrix_into(source.site(k), dest.site(k), &mut matrices[k * q * q..(k + 1) * q * q])?;
        }
        if max_distance >= t.epsilon {
            return Err(Error::TransportRadius { distance: max_distance, epsilon: t.epsilon });
        }
        Ok(TransportContext { source: source.clone(), dest: dest.clone(), matrices, max_distance })
    }

    pub fn reversed(&self) -> Self {
        let q = self.source.q();
        let mut m = self.matrices.clone();
        for blk in m.chunks_mut(q * q) {
            for i in 0..q {
                for j in i + 1..q {
                    blk.swap(i * q + j, j * q + i);
                }
            }
        }
        TransportContext { source: self.dest.clone(), dest: self.source.clone(), matrices: m, max_distance: self.max_distance }
    }

    /// Transport matrix at `site`, row-major `q×q`.
    pub fn matrix(&self, site: usize) -> &[f64] {
        let q = self.source.q();
        &self.matrices[site * q * q..(site + 1) * q * q]
    }
}

/// Applies the site-wise transport to the target factor of `psi`.
pub fn transport_spinor(ctx: &TransportContext, psi: &TwistedSpinorField) -> Result<TwistedSpinorField> {
    if psi.basepoint.values() != ctx.source.values() {
        return Err(Error::InvalidInput("spinor does not live over the transport source".into()));
    }
    let res = psi.tangency_residual();
    if res > TANGENCY_LIMIT {
        return Err(Error::TangencyViolation { residual: res, limit: TANGENCY_LIMIT });
    }
    let q = ctx.source.q();
    let mut out = TwistedSpinorField::zeros(&ctx.dest);
    for k in 0..ctx.source.domain.n_sites() {
        let m = ctx.matrix(k);
        for a in 0..q {
            for s in 0..2 {
                out.values[(k * q + a) * 2 + s] = (0..q).map(|b| psi.values[(k * q + b) * 2 + s] * m[a * q + b]).sum();
            }
        }
    }
    Ok(out)
}

/// Sup-norm of `P^{v,u0} P^{u,v} P^{u0,u} Z - Z` for `Z` over `u0`.
pub fn triple_transport_defect(u0: &Arc<MapField>, u: &Arc<MapField>, v: &Arc<MapField>, z: &TwistedSpinorField) -> Result<f64> {
    let a = transport_spinor(&TransportContext::new(u0, u)?, z)?;
    let b = transport_spinor(&TransportContext::new(u, v)?, &a)?;
    let c = transport_spinor(&TransportContext::new(v, u0)?, &b)?;
    Ok(c.sub(z).c0_norm())
}

/// Largest `‖(P^{u,v} D^u P^{v,u} - D^v) ψ‖ / ‖ψ‖` over random tangential
/// probes `ψ` over `v`, together with `‖u - v‖_{C⁰}`.
pub fn operator_comparison_defect<R: Rng>(
    u: &Arc<MapField>,
    v: &Arc<MapField>,
    block: Block,
    probes: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let ctx = TransportContext::new(v, u)?;
    let back = ctx.reversed();
    let du = TwistedDirac::new(u, block)?;
    let dv = TwistedDirac::new(v, block)?;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let raw = TwistedSpinorField::random_tangential(v, rng);
        let psi = dv.expand(&dv.compress(&raw.values));
        let moved = transport_spinor(&ctx, &psi)?;
        let a = transport_spinor(&back, &du.apply_dirac(&moved)?)?;
        let b = dv.apply_dirac(&psi)?;
        worst = worst.max(a.sub(&b).l2_norm() / psi.l2_norm());
    }
    Ok((worst, u.c0_distance(v)))
}

/// Diagnostics of one constraint-spinor solve.
#[derive(Clone, Debug, Serialize)]
pub struct ConstraintDiagnostics {
    /// `‖ψ̄‖_{L²}` before normalization, for a unit input.
    pub psi_bar_norm: f64,
    pub kernel_dim: usize,
    pub threshold: f64,
    /// Whether `‖ψ̄‖ ≥ √(1/2)`.
    pub above_half: bool,
    /// Whether `‖ψ̄‖ ≥ √(3/4)`.
    pub above_three_quarters: bool,
}

/// Transports the unit spinor `psi0` from its basepoint to `ctx.dest`,
/// projects onto `|λ| < lambda` of `op` using `spectral` (eigenpairs of
/// `op` in block coordinates) and normalizes.
pub fn constraint_spinor_with(
    ctx: &TransportContext,
    psi0: &TwistedSpinorField,
    op: &TwistedDirac,
    spectral: &SpectralData,
    lambda: f64,
) -> Result<(TwistedSpinorField, ConstraintDiagnostics)> {
    let moved = transport_spinor(ctx, psi0)?;
    let x = spectral.project(&op.compress(&moved.values), lambda)?;
    let bar = op.expand(&x);
    let norm = bar.l2_norm();
    if norm < 1e-8 {
        return Err(Error::DegenerateProjection { norm });
    }
    let psi = bar.scaled(C64::new(1.0 / norm, 0.0));
    let diag = ConstraintDiagnostics {
        psi_bar_norm: norm,
        kernel_dim: spectral.kernel_count(lambda)?,
        threshold: lambda,
        above_half: norm >= 0.5f64.sqrt(),
        above_three_quarters: norm >= 0.75f64.sqrt(),
    };
    Ok((psi, diag))
}

/// Constraint spinor over `ut` from the anchor spinor `psi0` (unit norm,
/// in the near-kernel over its own basepoint) with a dense eigensolve.
pub fn constraint_spinor(
    ut: &Arc<MapField>,
    psi0: &TwistedSpinorField,
    lambda: f64,
    block: Block,
) -> Result<(TwistedSpinorField, ConstraintDiagnostics)> {
    let ctx = TransportContext::new(&psi0.basepoint, ut)?;
    let op = TwistedDirac::new(ut, block)?;
    let sd = op.spectrum()?;
    constraint_spinor_with(&ctx, psi0, &op, &sd, lambda)
}

/// Unit spinor spanned by eigenvector `index` of the near-kernel of `op`.
pub fn kernel_spinor(op: &TwistedDirac, spectral: &SpectralData, lambda: f64, index: usize) -> Result<TwistedSpinorField> {
    let c = spectral.kernel_count(lambda)?;
    if index >= c {
        return Err(Error::InvalidInput(format!("kernel index {index} out of range for dimension {c}")));
    }
    let x: Vec<C64> = spectral.eigenvectors.column(index).iter().copied().collect();
    let psi = op.expand(&x);
    let n = psi.l2_norm();
    Ok(psi.scaled(C64::new(1.0 / n, 0.0)))
}
