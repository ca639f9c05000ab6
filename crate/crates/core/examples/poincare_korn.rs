//! Best Poincaré-Korn constants on the unit square and the unit disk
//! against the explicit bounds, plain and weighted by |x|^p.

use std::sync::Arc;

use kornlab::constants::{paper_constants, poincare_korn_best};
use kornlab::diffops::StencilFamily;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    let h = 1.0 / 32.0;
    for (name, shape) in [
        ("square", ShapeDescriptor::unit_square()),
        ("disk", ShapeDescriptor::ball(vec![0.0, 0.0], 1.0)),
    ] {
        let mask = Arc::new(rasterize_fitted(&shape, 2, h)?);
        let bounds = paper_constants(2.0, 2, mask.diameter())?;
        let plain = poincare_korn_best(&mask, 2.0, false, StencilFamily::DualPair, 1e-8, 0)?;
        let weighted = poincare_korn_best(&mask, 2.0, true, StencilFamily::DualPair, 1e-8, 0)?;
        println!(
            "{name:<6} plain {:.6} <= kappa {:.6}   weighted {:.6} <= C {:.6}",
            plain.value, bounds.kappa_omega, weighted.value, bounds.c_pn
        );
    }
    Ok(())
}
