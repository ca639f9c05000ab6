//! First Korn constant at p = 2 under refinement on the unit square and the
//! unit disk. The dual-pair family reproduces the continuous value 2.

use std::sync::Arc;

use kornlab::constants::korn_first_p2;
use kornlab::diffops::StencilFamily;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    for (name, shape) in [
        ("square", ShapeDescriptor::unit_square()),
        ("disk", ShapeDescriptor::ball(vec![0.0, 0.0], 1.0)),
    ] {
        for n in [8, 16, 32, 64] {
            let mask = Arc::new(rasterize_fitted(&shape, 2, 1.0 / n as f64)?);
            let est = korn_first_p2(&mask, StencilFamily::DualPair, 1e-10, 0)?;
            println!(
                "{name:<7} h=1/{n:<3} K={:.12}  residual={:.1e}  iterations={}",
                est.value, est.residual, est.iterations
            );
        }
    }
    Ok(())
}
