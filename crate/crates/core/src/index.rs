//! Kernel-dimension arithmetic: twisted Dirac kernels over CP¹ from line
//! bundle cohomology, the mod-2 invariants built from kernel dimensions, and
//! kernel-dimension tracking along geodesic homotopies of maps.

use crate::error::{Error, Result};
use crate::twisted::{Block, MapField, TwistedDirac};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Twisting data for a map `CP¹ → N` into a surface of genus `g_N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cp1TwistData {
    pub deg: i64,
    pub g_n: i64,
}

impl Cp1TwistData {
    pub fn new(deg: i64, g_n: i64) -> Result<Self> {
        if g_n < 0 {
            return Err(Error::InvalidInput(format!("genus {g_n} is negative")));
        }
        Ok(Cp1TwistData { deg, g_n })
    }

    /// First Chern number of the pulled-back tangent bundle, `2 deg (1 - g_N)`.
    pub fn chern(&self) -> i64 {
        2 * self.deg * (1 - self.g_n)
    }
}

/// `dim H⁰(CP¹, O(m))` in the convention where `γ` is the tautological
/// bundle: `0` for `m > 0`, `1 - m` otherwise.
pub fn h0_dim(m: i64) -> i64 {
    if m > 0 { 0 } else { 1 - m }
}

/// Complex kernel dimension of the `(1,0)`-twisted Dirac operator over CP¹,
/// as `h⁰(a+1) + h⁰(1-a)`.
pub fn cp1_kernel_dim(data: Cp1TwistData) -> i64 {
    let a = data.chern();
    let dim = h0_dim(a + 1) + h0_dim(1 - a);
    debug_assert_eq!(dim, 2 * (data.deg * (data.g_n - 1)).abs());
    dim
}

/// `[½ dim_ℂ ker]` mod 2.
pub fn script_i(dim_c_kernel: i64) -> Result<u8> {
    if dim_c_kernel < 0 {
        return Err(Error::InvalidInput(format!("kernel dimension {dim_c_kernel} is negative")));
    }
    if dim_c_kernel % 2 != 0 {
        return Err(Error::OddKernelDimension(dim_c_kernel));
    }
    Ok(((dim_c_kernel / 2) % 2) as u8)
}

/// The kernel-dimension branches of the mod-2 index in domain dimension `m`:
/// `dim mod 2` for `m ≡ 1`, `dim/2 mod 2` for `m ≡ 2`, zero for `m ≡ 3, 5,
/// 6, 7 (mod 8)`. The `m ≡ 0, 4` branches need characteristic classes.
pub fn index_i(m: u32, dim_c_kernel: i64) -> Result<u8> {
    if dim_c_kernel < 0 {
        return Err(Error::InvalidInput(format!("kernel dimension {dim_c_kernel} is negative")));
    }
    match m % 8 {
        1 => Ok((dim_c_kernel % 2) as u8),
        2 => script_i(dim_c_kernel),
        0 | 4 => Err(Error::Unsupported(format!("index in dimension {m} needs characteristic classes"))),
        _ => Ok(0),
    }
}

/// One row of the CP¹ table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cp1Row {
    pub deg: i64,
    pub g_n: i64,
    pub dim_c: i64,
    pub script_i: u8,
}

pub fn cp1_table(degs: std::ops::RangeInclusive<i64>, genera: std::ops::RangeInclusive<i64>) -> Vec<Cp1Row> {
    let mut rows = Vec::new();
    for deg in degs {
        for g_n in genera.clone() {
            let dim_c = cp1_kernel_dim(Cp1TwistData { deg, g_n });
            let si = script_i(dim_c).expect("CP¹ kernel dimensions are even");
            rows.push(Cp1Row { deg, g_n, dim_c, script_i: si });
        }
    }
    rows
}

/// Kernel dimensions along a homotopy.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralFlowReport {
    /// `(t, dim)`; `None` where an eigenvalue sits on the threshold.
    pub samples: Vec<(f64, Option<usize>)>,
    /// `(t_before, t_after, dim_before, dim_after)` for each change.
    pub jumps: Vec<(f64, f64, usize, usize)>,
    /// Whether every sampled dimension and every change is even.
    pub parity_ok: bool,
    pub has_real_structure: bool,
}

/// Site-wise geodesic interpolation `H_t = exp_{u0}(t exp⁻¹_{u0} u1)`.
pub fn geodesic_homotopy(u0: &MapField, u1: &MapField, t: f64) -> Result<MapField> {
    if u0.domain != u1.domain || u0.target != u1.target {
        return Err(Error::InvalidInput("homotopy endpoints must share domain and target".into()));
    }
    let q = u0.q();
    let mut out = vec![0.0; u0.values().len()];
    for k in 0..u0.domain.n_sites() {
        u0.target.geodesic_into(u0.site(k), u1.site(k), t, &mut out[k * q..(k + 1) * q])?;
    }
    MapField::from_ambient(&u0.domain, &u0.target, &out)
}

/// Samples the near-kernel dimension of `D_{1,0}` (or the full operator if
/// the target is not Kähler) at `steps + 1` equally spaced points of the
/// geodesic homotopy from `u0` to `u1`.
pub fn spectral_flow_family(u0: &MapField, u1: &MapField, steps: usize, lambda: f64) -> Result<SpectralFlowReport> {
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    let block = if u0.target.kaehler.is_some() { Block::TypeOneZero } else { Block::Full };
    let samples: Vec<(f64, Option<usize>)> = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / steps as f64;
            let ut = Arc::new(geodesic_homotopy(u0, u1, t)?);
            let op = TwistedDirac::new(&ut, block)?;
            match op.spectrum()?.kernel_count(lambda) {
                Ok(c) => Ok((t, Some(c))),
                Err(Error::AmbiguousCluster(_)) => Ok((t, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let known: Vec<(f64, usize)> = samples.iter().filter_map(|&(t, c)| c.map(|c| (t, c))).collect();
    let jumps: Vec<(f64, f64, usize, usize)> =
        known.windows(2).filter(|w| w[0].1 != w[1].1).map(|w| (w[0].0, w[1].0, w[0].1, w[1].1)).collect();
    let parity_ok = known.iter().all(|&(_, c)| c % 2 == 0) && jumps.iter().all(|j| (j.3 as i64 - j.2 as i64) % 2 == 0);
    Ok(SpectralFlowReport { samples, jumps, parity_ok, has_real_structure: u0.target.has_real_structure() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Boundary, TorusDomain};
    use crate::target::EmbeddedTarget;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn h0_values() {
        assert_eq!(h0_dim(1), 0);
        assert_eq!(h0_dim(0), 1);
        assert_eq!(h0_dim(-3), 4);
    }

    #[test]
    fn cp1_examples() {
        assert_eq!(cp1_kernel_dim(Cp1TwistData::new(1, 2).unwrap()), 2);
        assert_eq!(cp1_kernel_dim(Cp1TwistData::new(0, 4).unwrap()), 0);
        assert_eq!(cp1_kernel_dim(Cp1TwistData::new(3, 0).unwrap()), 6);
        assert!(Cp1TwistData::new(1, -1).is_err());
    }

    #[test]
    fn mod_two_values() {
        assert_eq!(script_i(0).unwrap(), 0);
        assert_eq!(script_i(cp1_kernel_dim(Cp1TwistData { deg: 1, g_n: 0 })).unwrap(), 1);
        assert_eq!(script_i(3), Err(Error::OddKernelDimension(3)));
        assert_eq!(index_i(2, 4).unwrap(), 0);
        assert_eq!(index_i(9, 3).unwrap(), 1);
        assert!(matches!(index_i(4, 2), Err(Error::Unsupported(_))));
        assert!(matches!(index_i(10, 3), Err(Error::OddKernelDimension(3))));
        for m in [3, 5, 6, 7, 11] {
            assert_eq!(index_i(m, 5).unwrap(), 0);
        }
    }

    proptest! {
        #[test]
        fn cp1_closed_form(deg in -10i64..=10, g in 0i64..=5) {
            let d = Cp1TwistData { deg, g_n: g };
            let a = d.chern();
            prop_assert_eq!(cp1_kernel_dim(d), h0_dim(a + 1) + h0_dim(1 - a));
            prop_assert_eq!(cp1_kernel_dim(d), 2 * (deg * (g - 1)).abs());
            prop_assert_eq!(script_i(cp1_kernel_dim(d)).unwrap() as i64, (deg * (g - 1)).abs() % 2);
        }

        #[test]
        fn index_i_dimension_branches(m in 1u32..64, k in 0i64..50) {
            match m % 8 {
                1 => prop_assert_eq!(index_i(m, k).unwrap() as i64, k % 2),
                2 => prop_assert_eq!(index_i(m, 2 * k).unwrap() as i64, k % 2),
                0 | 4 => prop_assert!(index_i(m, k).is_err()),
                _ => prop_assert_eq!(index_i(m, k).unwrap(), 0),
            }
        }
    }

    #[test]
    fn spectral_flow_on_flat_target() {
        let d = TorusDomain::square(8, [Boundary::Periodic; 2]).unwrap();
        let t = EmbeddedTarget::clifford_torus(1.0, 1.0).unwrap();
        let c0 = MapField::constant(&d, &t, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let c1 = MapField::constant(&d, &t, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        let lam = 0.25;
        let r = spectral_flow_family(&c0, &c1, 4, lam).unwrap();
        assert!(r.samples.iter().all(|s| s.1 == Some(2)) && r.jumps.is_empty() && r.parity_ok);
        let r = spectral_flow_family(&c0, &c0, 2, lam).unwrap();
        assert!(r.samples.iter().all(|s| s.1 == Some(2)));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = MapField::torus_angles(&d, &t, |x, y| (x, y)).unwrap();
        let a = w.perturbed(0.3, 2, &mut rng).unwrap();
        let b = w.perturbed(0.3, 2, &mut rng).unwrap();
        let r = spectral_flow_family(&a, &b, 6, lam).unwrap();
        assert!(r.parity_ok && r.has_real_structure);
    }

    #[test]
    fn homotopy_endpoints() {
        let d = TorusDomain::square(4, [Boundary::Periodic; 2]).unwrap();
        let t = EmbeddedTarget::sphere(3).unwrap();
        let a = MapField::constant(&d, &t, &[1.0, 0.0, 0.0]).unwrap();
        let b = MapField::constant(&d, &t, &[0.0, 1.0, 0.0]).unwrap();
        assert!(geodesic_homotopy(&a, &b, 0.0).unwrap().c0_distance(&a) < 1e-14);
        assert!(geodesic_homotopy(&a, &b, 1.0).unwrap().c0_distance(&b) < 1e-14);
        let m = geodesic_homotopy(&a, &b, 0.5).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.site(0)[0] - s).abs() < 1e-14 && (m.site(0)[1] - s).abs() < 1e-14);
        let c = MapField::constant(&d, &t, &[-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(geodesic_homotopy(&a, &c, 0.5), Err(Error::CutLocus { .. })));
    }
}
