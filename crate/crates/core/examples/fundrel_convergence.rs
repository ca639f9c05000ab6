//! Refinement study of the integrated key relation between |u|^p and the
//! symmetric gradient, for each stencil family.

use kornlab::diffops::StencilFamily;
use kornlab::geometry::ShapeDescriptor;
use kornlab::verify::{check_fundrel, default_fundrel_field};

fn main() -> kornlab::Result<()> {
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let spec = default_fundrel_field(2);
    for fam in [StencilFamily::Centered, StencilFamily::DualPair, StencilFamily::Forward] {
        for p in [1.5, 2.0, 3.0] {
            let r = check_fundrel(&spec, &ShapeDescriptor::unit_square(), 2, p, None, &hs, fam)?;
            let res: Vec<String> = r.levels.iter().map(|l| format!("{:.2e}", l.residual)).collect();
            println!("{:<10} p={p:<3} residuals [{}] slope {:.3}", fam.name(), res.join(", "), r.slope);
        }
    }
    Ok(())
}
