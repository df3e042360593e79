//! Plain Dirac spectrum on an 8×8 flat torus for each spin structure,
//! against the shifted dual lattice.

use dirac_harmonic::domain::{analytic_spectrum, Boundary, TorusDomain};
use dirac_harmonic::verify::plain_dirac_matrix;
use dirac_harmonic::linalg::hermitian_eigen;

fn main() -> dirac_harmonic::Result<()> {
    use Boundary::*;
    for spin in [[Periodic, Periodic], [Periodic, Antiperiodic], [Antiperiodic, Periodic], [Antiperiodic, Antiperiodic]] {
        let d = TorusDomain::square(8, spin)?;
        let (mut vals, _) = hermitian_eigen(plain_dirac_matrix(&d));
        vals.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        let kernel = vals.iter().filter(|v| v.abs() < 1e-8).count();
        println!("{spin:?}: kernel {kernel}, resolved up to |λ| = {:.3}", d.resolved_radius());
        for (l, m) in analytic_spectrum(&d, 12) {
            let found = vals.iter().filter(|v| (**v - l).abs() < 1e-9).count();
            println!("  λ = {l:+.6}  multiplicity {m}  found {found}");
        }
    }
    Ok(())
}
