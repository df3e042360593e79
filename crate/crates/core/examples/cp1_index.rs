//! Kernel dimensions over CP¹ and the resulting mod-2 invariant.

use dirac_harmonic::index::{cp1_table, index_i};

fn main() -> dirac_harmonic::Result<()> {
    println!("deg  g_N  dim_C  script_I");
    for row in cp1_table(-3..=3, 0..=3) {
        println!("{:>3}  {:>3}  {:>5}  {:>8}", row.deg, row.g_n, row.dim_c, row.script_i);
    }
    for m in 1..=8 {
        match index_i(m, 6) {
            Ok(v) => println!("dimension {m}, kernel 6: {v}"),
            Err(e) => println!("dimension {m}: {e}"),
        }
    }
    Ok(())
}
