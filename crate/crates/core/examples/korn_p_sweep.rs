//! Lower bounds for the first Korn constant over p by quotient ascent,
//! next to the p = 2 eigenvalue. Values grow toward both ends of the range,
//! where the continuous inequality fails.

use std::sync::Arc;

use kornlab::constants::{korn_first_p2, korn_general_p, KornMode, QuotientOptions};
use kornlab::diffops::StencilFamily;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    let mask = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, 1.0 / 12.0)?);
    let fam = StencilFamily::DualPair;
    let sharp = korn_first_p2(&mask, fam, 1e-10, 0)?;
    println!("p = 2 eigenvalue: {:.6}", sharp.value);
    let opts = QuotientOptions { restarts: 4, ..QuotientOptions::default() };
    for p in [1.2, 1.5, 2.0, 3.0, 4.0, 6.0] {
        let est = korn_general_p(&mask, p, KornMode::First, fam, &opts)?;
        println!("p = {p:<4} K >= {:.6}  (best seed {}, {} iterations)", est.value, est.seed, est.iterations);
    }
    Ok(())
}
