//! Along a constant map the twisted operator is `n` copies of the plain one.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::{Block, MapField, TwistedDirac};
use std::sync::Arc;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(8, [Boundary::Periodic, Boundary::Periodic])?;
    for (t, p) in [
        (EmbeddedTarget::sphere(3)?, vec![1.0, 0.0, 0.0]),
        (EmbeddedTarget::sphere(4)?, vec![0.0, 1.0, 0.0, 0.0]),
        (EmbeddedTarget::clifford_torus(1.0, 0.5)?, vec![1.0, 0.0, 0.5, 0.0]),
    ] {
        let u = Arc::new(MapField::constant(&d, &t, &p)?);
        let sd = TwistedDirac::new(&u, Block::Full)?.spectrum()?;
        let lam = sd.spectral_gap()?;
        println!(
            "target dim {}: kernel {} (2 × {}), Λ = {lam:.3}, first clusters {:?}",
            t.intrinsic_dim,
            sd.kernel_count(lam)?,
            t.intrinsic_dim,
            &sd.cluster_sizes()[..4]
        );
    }
    Ok(())
}
