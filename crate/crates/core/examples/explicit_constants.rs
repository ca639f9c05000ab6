//! Table of the explicit constants C_{p,N}, κ_{p,Ω} and κ_{p,∂Ω} for a
//! unit-diameter domain.

use kornlab::constants::paper_constants;

fn main() -> kornlab::Result<()> {
    println!("{:>4} {:>2} {:>10} {:>10} {:>10}", "p", "N", "C", "kappa", "kappa_bd");
    for dim in 1..=3 {
        for p in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let c = paper_constants(p, dim, 1.0)?;
            println!(
                "{:>4} {:>2} {:>10.6} {:>10.6} {:>10.6}",
                p, dim, c.c_pn, c.kappa_omega, c.kappa_boundary
            );
        }
    }
    Ok(())
}
