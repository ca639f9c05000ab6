//! Second Korn constant at p = 2 with free boundary, on shapes of growing
//! eccentricity, and the field that attains it.

use std::sync::Arc;

use kornlab::constants::korn_second_p2;
use kornlab::diffops::StencilFamily;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    let h = 1.0 / 24.0;
    for aspect in [1.0, 2.0, 4.0] {
        let shape = ShapeDescriptor::Box { lo: vec![0.0, 0.0], hi: vec![aspect, 1.0] };
        let mask = Arc::new(rasterize_fitted(&shape, 2, h)?);
        let est = korn_second_p2(&mask, StencilFamily::DualPair, 1e-8, 0)?;
        println!("box {aspect}x1: K = {:.6} (residual {:.1e})", est.value, est.residual);
    }
    let mask = Arc::new(rasterize_fitted(&ShapeDescriptor::l_shape(1.0, 0.5), 2, h)?);
    let est = korn_second_p2(&mask, StencilFamily::DualPair, 1e-8, 0)?;
    println!("l-shape: K = {:.6}", est.value);
    let mut csv = vec![];
    est.maximizer.write_csv(&mut csv)?;
    println!("maximizer: {} CSV lines (x, y, u1, u2)", csv.split(|&b| b == b'\n').count() - 1);
    Ok(())
}
