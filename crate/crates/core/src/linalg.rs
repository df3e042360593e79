//! Small dense helpers shared by the spectral code.

use crate::C64;
use nalgebra::DMatrix;

/// Hermitian inner product `sum conj(a) b` (no quadrature weight).
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn caxpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Largest entry modulus of a complex matrix.
pub fn cmax_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Modified Gram-Schmidt with reorthogonalization. Vectors whose remaining
/// norm falls below `drop_tol` times their original norm are discarded.
pub fn orthonormalize(vs: Vec<Vec<C64>>, drop_tol: f64) -> Vec<Vec<C64>> {
    let mut out: Vec<Vec<C64>> = Vec::with_capacity(vs.len());
    for mut v in vs {
        let n0 = cnorm(&v);
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &out {
                let c = cdot(q, &v);
                caxpy(&mut v, -c, q);
            }
        }
        let n = cnorm(&v);
        if n > drop_tol * n0 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Groups sorted values into clusters: consecutive values closer than
/// `abs_tol + rel_tol * max(|a|,|b|)` share an id.
pub fn cluster_ids(sorted: &[f64], rel_tol: f64, abs_tol: f64) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sorted.len());
    let mut id = 0;
    for (i, &v) in sorted.iter().enumerate() {
        if i > 0 {
            let p = sorted[i - 1];
            if (v - p).abs() > abs_tol + rel_tol * v.abs().max(p.abs()) {
                id += 1;
            }
        }
        ids.push(id);
    }
    ids
}

pub const CLUSTER_REL_TOL: f64 = 1e-8;
pub const CLUSTER_ABS_TOL: f64 = 1e-10;
