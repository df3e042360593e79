//! Block preconditioned conjugate gradient (LOBPCG) for the low end of the
//! spectrum of `D²`, used to track near-kernel clusters of twisted Dirac
//! operators when a dense solve per time step is too expensive.
//!
//! The preconditioner is the shifted inverse Laplacian `(|ξ|² + σ)^{-1}`
//! applied in Fourier space, which matches the principal symbol of `D²`.

use crate::error::{Error, Result};
use crate::linalg::{self, cdot, cnorm, orthonormalize};
use crate::twisted::{SpectralData, TwistedDirac};
use crate::C64;
use nalgebra::DMatrix;

#[derive(Clone, Debug)]
pub struct LobpcgOptions {
    /// Residual target `‖D v - λ v‖` for Ritz pairs below the threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Shift of the Laplacian preconditioner.
    pub sigma: f64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        LobpcgOptions { tol: 1e-9, max_iter: 300, sigma: 1.0 }
    }
}

/// Outcome of a block solve: Ritz data of `D` restricted to the converged
/// block, plus the block itself for warm starts.
#[derive(Clone, Debug)]
pub struct ClusterSolve {
    pub spectral: SpectralData,
    pub block: Vec<Vec<C64>>,
    pub iterations: usize,
}

fn to_matrix(vs: &[Vec<C64>]) -> DMatrix<C64> {
    let n = vs.first().map_or(0, |v| v.len());
    DMatrix::from_fn(n, vs.len(), |i, j| vs[j][i])
}

fn columns(m: &DMatrix<C64>) -> Vec<Vec<C64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

/// Rayleigh-Ritz of `D` on an orthonormal block; returns Ritz values of
/// `D` (ascending), vectors and residual norms.
fn dirac_ritz(op: &TwistedDirac, x: &[Vec<C64>]) -> (Vec<f64>, Vec<Vec<C64>>, Vec<f64>) {
    let dx: Vec<Vec<C64>> = x.iter().map(|v| op.apply_block(v)).collect();
    let m = x.len();
    let h = DMatrix::from_fn(m, m, |i, j| cdot(&x[i], &dx[j]));
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let (vals, y) = linalg::hermitian_eigen(h);
    let xm = to_matrix(x) * &y;
    let dxm = to_matrix(&dx) * &y;
    let res = (0..m)
        .map(|j| (dxm.column(j) - xm.column(j) * C64::new(vals[j], 0.0)).norm())
        .collect();
    (vals, columns(&xm), res)
}

/// Finds the `block_size` lowest eigenvalues of `D²` starting from `warm`
/// (padded with deterministic pseudo-random vectors), then resolves them
/// into eigenpairs of `D`. Converged when every Ritz pair with
/// `|λ| < threshold` meets the residual target and the block reaches above
/// the threshold.
pub fn solve_cluster(
    op: &TwistedDirac,
    warm: &[Vec<C64>],
    block_size: usize,
    threshold: f64,
    opts: &LobpcgOptions,
) -> Result<ClusterSolve> {
    let n = op.dim();
    if block_size == 0 || block_size * 3 > n {
        return Err(Error::InvalidInput(format!("block size {block_size} unsuitable for dimension {n}")));
    }
    let r = op.rank();
    let sigma = opts.sigma;
    let precond = |v: &[C64]| op.domain().spinor_symbol(v, 2 * r, |k2| 1.0 / (k2 + sigma));
    let a_apply = |v: &[C64]| op.apply_block(&op.apply_block(v));

    let mut init: Vec<Vec<C64>> = warm.iter().take(block_size).cloned().collect();
    let mut state = 0x9e3779b97f4a7c15u64;
    while init.len() < block_size + 2 {
        let v: Vec<C64> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let a = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                C64::new(a, b)
            })
            .collect();
        init.push(precond(&v));
    }
    let mut x = orthonormalize(init, 1e-8);
    x.truncate(block_size);
    if x.len() < block_size {
        return Err(Error::EigenFailure { residual: f64::INFINITY, target: opts.tol });
    }
    let mut ax: Vec<Vec<C64>> = x.iter().map(|v| a_apply(v)).collect();
    let mut p: Vec<Vec<C64>> = Vec::new();
    let mut worst = f64::INFINITY;
    for it in 0..opts.max_iter {
        // Ritz values of D² on X
        let m = x.len();
        let h = DMatrix::from_fn(m, m, |i, j| cdot(&x[i], &ax[j]));
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let (theta, y) = linalg::hermitian_eigen(h);
        let xm = to_matrix(&x) * &y;
        let axm = to_matrix(&ax) * &y;
        x = columns(&xm);
        ax = columns(&axm);

        let (vals, vecs, res) = dirac_ritz(op, &x);
        let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = vals
            .iter()
            .zip(&res)
            .filter(|(v, _)| v.abs() < threshold)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max);
        if worst <= opts.tol && top > threshold && it > 0 {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| vals[i].abs().total_cmp(&vals[j].abs()).then(vals[i].total_cmp(&vals[j])));
            let ev: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
            let vm = DMatrix::from_fn(n, m, |row, c| vecs[order[c]][row]);
            return Ok(ClusterSolve {
                spectral: SpectralData::assemble(ev, vm, false),
                block: order.iter().map(|&i| vecs[i].clone()).collect(),
                iterations: it,
            });
        }

        let w: Vec<Vec<C64>> = (0..m)
            .map(|j| {
                let mut rj = ax[j].clone();
                linalg::caxpy(&mut rj, C64::new(-theta[j], 0.0), &x[j]);
                precond(&rj)
            })
            .filter(|v| cnorm(v) > 0.0)
            .collect();
        let mut s = x.clone();
        s.extend(w);
        s.extend(p.iter().cloned());
        let s = orthonormalize(s, 1e-10);
        let k = s.len();
        let as_: Vec<Vec<C64>> = s.iter().map(|v| a_apply(v)).collect();
        let h = DMatrix::from_fn(k, k, |i, j| cdot(&s[i], &as_[j]));
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let (_, c) = linalg::hermitian_eigen(h);
        let c = c.columns(0, m).clone_owned();
        let sm = to_matrix(&s);
        let asm = to_matrix(&as_);
        x = columns(&(&sm * &c));
        ax = columns(&(&asm * &c));
        let mut cp = c.clone();
        for i in 0..m.min(k) {
            for j in 0..m {
                cp[(i, j)] = C64::new(0.0, 0.0);
            }
        }
        p = columns(&(&sm * &cp));
        let xs = orthonormalize(x.clone(), 1e-12);
        if xs.len() < m {
            return Err(Error::EigenFailure { residual: worst, target: opts.tol });
        }
        if it % 10 == 9 {
            // refresh the orthonormal basis against drift
            x = xs;
            ax = x.iter().map(|v| a_apply(v)).collect();
        }
    }
    Err(Error::EigenFailure { residual: worst, target: opts.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Boundary, TorusDomain};
    use crate::target::EmbeddedTarget;
    use crate::twisted::{Block, MapField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn matches_dense_cluster() {
        let d = TorusDomain::square(8, [Boundary::Periodic; 2]).unwrap();
        let t = EmbeddedTarget::sphere(3).unwrap();
        let u = MapField::constant(&d, &t, &[1.0, 0.0, 0.0]).unwrap();
        let u = Arc::new(u.perturbed(0.05, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
        for block in [Block::Full, Block::TypeOneZero] {
            let op = TwistedDirac::new(&u, block).unwrap();
            let dense = op.spectrum().unwrap();
            let lam = dense.gap.unwrap();
            let kd = dense.kernel_count.unwrap();
            let it = solve_cluster(&op, &[], kd + 4, lam, &LobpcgOptions::default()).unwrap();
            assert_eq!(it.spectral.kernel_count(lam).unwrap(), kd);
            let mut a: Vec<f64> = it.spectral.eigenvalues[..kd].to_vec();
            let mut b: Vec<f64> = dense.eigenvalues[..kd].to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x: Vec<C64> = (0..op.dim()).map(|_| C64::new(rand::Rng::random(&mut rng), 0.0)).collect();
            let a = dense.project(&x, lam).unwrap();
            let b = it.spectral.project(&x, lam).unwrap();
            assert!(linalg::max_abs_diff(&a, &b) < 1e-8);
            // warm restart converges immediately
            let again = solve_cluster(&op, &it.block, kd + 4, lam, &LobpcgOptions::default()).unwrap();
            assert!(again.iterations <= 2);
        }
    }
}
