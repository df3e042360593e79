//! Transport of a kernel spinor to nearby maps and its projection back onto
//! the near-kernel there.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::transport::{constraint_spinor, kernel_spinor, transport_spinor, triple_transport_defect, TransportContext};
use dirac_harmonic::twisted::{Block, MapField, TwistedDirac};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(8, [Boundary::Periodic; 2])?;
    let t = EmbeddedTarget::sphere(3)?;
    let u0 = Arc::new(MapField::constant(&d, &t, &[1.0, 0.0, 0.0])?.perturbed(0.03, 2, &mut ChaCha8Rng::seed_from_u64(8))?);
    let op = TwistedDirac::new(&u0, Block::Full)?;
    let sd = op.spectrum()?;
    let lam = sd.spectral_gap()?;
    let psi0 = kernel_spinor(&op, &sd, lam, 0)?;
    println!("kernel {} below Λ = {lam:.3}", sd.kernel_count(lam)?);
    for amp in [0.16, 0.08, 0.04, 0.02, 0.01] {
        let ut = Arc::new(u0.perturbed(amp, 2, &mut ChaCha8Rng::seed_from_u64(9))?);
        let (psi, diag) = constraint_spinor(&ut, &psi0, lam, Block::Full)?;
        let moved = transport_spinor(&TransportContext::new(&u0, &ut)?, &psi0)?;
        let dist = ut.c0_distance(&u0);
        println!(
            "|u - u0| {dist:.4}  |ψ̄| {:.6}  Lipschitz ratio {:.4}  tangency {:.1e}",
            diag.psi_bar_norm,
            psi.sub(&moved).c0_norm() / dist,
            psi.tangency_residual()
        );
    }
    let v = Arc::new(u0.perturbed(0.05, 2, &mut ChaCha8Rng::seed_from_u64(10))?);
    let w = Arc::new(u0.perturbed(0.05, 2, &mut ChaCha8Rng::seed_from_u64(11))?);
    println!("transport around u0 → v → w → u0 moves ψ0 by {:.3e}", triple_transport_defect(&u0, &v, &w, &psi0)?);
    Ok(())
}
