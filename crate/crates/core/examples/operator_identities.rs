//! Residuals of the discrete vector-calculus identities for each stencil
//! family, on a random field over the unit square and the unit cube.

use std::sync::Arc;

use kornlab::diffops::{
    adjointness_defect, curl_identity_residual, grad, identity_residuals, StencilFamily,
};
use kornlab::field::{generate, GeneratorSpec};
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    let spec = GeneratorSpec::RandomFourier { modes: 4, decay: 1.5, seed: 7 };
    let square = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, 1.0 / 32.0)?);
    let free = generate(&spec, &square, false)?;
    let compact = generate(&spec, &square, true)?;

    println!("{:<10} {:>11} {:>11} {:>11} {:>11}", "family", "hodge-skw", "hodge-sym", "korn", "by-parts");
    for fam in StencilFamily::ALL {
        let r = identity_residuals(&free, fam)?;
        let korn = identity_residuals(&compact, fam)?.korn.unwrap_or(f64::NAN);
        // ∫∇u : ∇u + ∫u · Δu vanishes only when div is the adjoint of grad.
        let by_parts = adjointness_defect(&compact, &grad(&compact, fam), fam)?;
        println!(
            "{:<10} {:>11.2e} {:>11.2e} {:>11.2e} {:>11.2e}",
            fam.name(), r.hodge_skw, r.hodge_sym, korn, by_parts
        );
    }

    let cube = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_box(3), 3, 1.0 / 12.0)?);
    let u = generate(&spec, &cube, false)?;
    for fam in StencilFamily::ALL {
        println!("curl curl, {:<10} {:.2e}", fam.name(), curl_identity_residual(&u, fam)?);
    }
    Ok(())
}
