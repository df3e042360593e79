//! Uncoupled flow of a perturbed linear wrap into a Clifford torus: the
//! energy falls to that of the linear representative and the degree stays.

use dirac_harmonic::domain::{Boundary, TorusDomain};
use dirac_harmonic::flow::{run, FlowConfig, SpinorInit};
use dirac_harmonic::target::EmbeddedTarget;
use dirac_harmonic::twisted::MapField;
use std::f64::consts::PI;

fn main() -> dirac_harmonic::Result<()> {
    let d = TorusDomain::square(16, [Boundary::Periodic; 2])?;
    let t = EmbeddedTarget::clifford_torus(1.0, 0.5)?;
    let u = MapField::torus_angles(&d, &t, |x, y| (x + 0.3 * (x + y).sin(), 2.0 * y + 0.2 * x.cos()))?;
    let cfg = FlowConfig { alpha: 1.0, dt: 0.05, t_max: 100.0, max_steps: 10_000, el_tol: 1e-9, ..FlowConfig::default() };
    let tr = run(u, SpinorInit::Zero, cfg)?;
    for r in tr.records.iter().step_by(40) {
        println!("t {:7.2}  E {:.8}  EL {:.2e}  degree {:?}", r.t, r.energy, r.el_residual, r.degree);
    }
    let exact = 0.5 * (1.0 + 4.0 * 0.25) * 4.0 * PI * PI;
    let last = tr.records.last().unwrap();
    println!("{:?}: E = {:.10}, linear wrap {exact:.10}", tr.events.last().map(|e| e.kind), last.energy);
    Ok(())
}
