//! Eigenvalue multiplicities of the `(1,0)` block along maps into the
//! Clifford torus come in pairs.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::{Block, MapField, TwistedDirac};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(8, [Boundary::Antiperiodic; 2])?;
    let t = EmbeddedTarget::clifford_torus(1.0, 1.0)?;
    let wrap = MapField::torus_angles(&d, &t, |x, y| (x, x + y))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..5 {
        let u = Arc::new(wrap.perturbed(0.2, 2, &mut rng)?);
        let op = TwistedDirac::new(&u, Block::TypeOneZero)?;
        let sd = op.spectrum()?;
        let sizes = sd.cluster_sizes();
        println!(
            "map {i}: {} clusters, all even {}, ± defect {:.1e}, jD - Dj {:.1e}, smallest |λ| {:.4}",
            sizes.len(),
            sd.even_multiplicity(),
            sd.symmetry_defect(),
            op.j_commutation_defect(2, &mut rng)?,
            sd.eigenvalues[0].abs()
        );
    }
    Ok(())
}
