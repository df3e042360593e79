//! Near-kernel dimension of the `(1,0)` block along a geodesic homotopy
//! between two maps into the Clifford torus.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::index::spectral_flow_family;
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::MapField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(8, [Boundary::Periodic; 2])?;
    let t = EmbeddedTarget::clifford_torus(1.0, 1.0)?;
    let wrap = MapField::torus_angles(&d, &t, |x, y| (x - y, y))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = wrap.perturbed(0.25, 2, &mut rng)?;
    let b = wrap.perturbed(0.25, 2, &mut rng)?;
    let rep = spectral_flow_family(&a, &b, 10, 0.25)?;
    for (t, dim) in &rep.samples {
        println!("t {t:.2}  dim {dim:?}");
    }
    println!("jumps {:?}, parity ok {}", rep.jumps, rep.parity_ok);
    Ok(())
}
