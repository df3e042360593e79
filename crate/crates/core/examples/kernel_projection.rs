//! Near-kernel projection by resolvent quadrature against the
//! eigendecomposition, for growing node counts.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::{Block, MapField, TwistedDirac, TwistedSpinorField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> dirac_harmonic::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = TorusDomain::square(8, [Boundary::Periodic; 2])?;
    let t = EmbeddedTarget::sphere(3)?;
    let u = Arc::new(MapField::constant(&d, &t, &[1.0, 0.0, 0.0])?.perturbed(0.03, 2, &mut rng)?);
    let op = TwistedDirac::new(&u, Block::Full)?;
    let lam = op.spectral_gap()?;
    let psi = TwistedSpinorField::random_tangential(&u, &mut rng);
    let exact = op.project_kernel_eigen(&psi, lam)?;
    println!("Λ = {lam:.4}, |P ψ| = {:.6}", exact.l2_norm());
    for nodes in [4, 8, 16, 32] {
        let q = op.project_kernel_contour(&psi, lam, nodes)?;
        println!("{nodes:>3} nodes: max error {:.3e}", q.sub(&exact).c0_norm());
    }
    Ok(())
}
