//! Coupled flow into the round sphere with the spinor held in the
//! near-kernel: energies, kernel count and projected-spinor norm per step.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::flow::{Flow, FlowConfig, SpinorInit};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::MapField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(8, [Boundary::Periodic; 2])?;
    let t = EmbeddedTarget::sphere(3)?;
    let u = MapField::constant(&d, &t, &[1.0, 0.0, 0.0])?.perturbed(0.03, 2, &mut ChaCha8Rng::seed_from_u64(5))?;
    let cfg = FlowConfig { alpha: 1.05, dt: 2e-3, max_steps: 40, el_tol: 0.0, ..FlowConfig::default() };
    let mut flow = Flow::new(u, SpinorInit::Kernel { index: 0 }, cfg)?;
    println!("Λ = {:.4}", flow.lambda().unwrap());
    while flow.step()?.is_none() {}
    for r in flow.records().iter().step_by(5) {
        println!(
            "t {:.3}  E_α {:.6e}  residual {:+.2e}  kernel {:?}  |ψ̄| {:.6}",
            r.t,
            r.energy_alpha,
            r.diss_residual,
            r.kernel_dim,
            r.psi_bar_norm.unwrap_or(f64::NAN)
        );
    }
    println!("{:?}", flow.events().last().map(|e| e.kind));
    Ok(())
}
