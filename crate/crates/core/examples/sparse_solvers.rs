//! Assembles the Korn stiffness matrices and exercises the solvers: a CG
//! solve with the symmetric-gradient Gram matrix and both ends of its
//! generalized spectrum against the mass matrix.

use std::sync::Arc;

use kornlab::diffops::StencilFamily;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};
use kornlab::linsolve::{
    assemble, cg_solve, gen_eig_max, gen_eig_min, BoundaryCondition, OperatorKind,
};

fn main() -> kornlab::Result<()> {
    let mask = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, 1.0 / 32.0)?);
    let fam = StencilFamily::DualPair;
    let bc = BoundaryCondition::ZeroBoundary;
    let s = assemble(OperatorKind::SymGrad, &mask, fam, bc)?;
    let m = assemble(OperatorKind::Mass, &mask, fam, bc)?;
    println!("unknowns {}, nonzeros {}", s.rows(), s.nnz());

    let b = vec![1.0; s.rows()];
    let x = cg_solve(&s, &b, 1e-10)?;
    let r: f64 = s.apply(&x).iter().zip(&b).map(|(ax, bi)| (ax - bi).powi(2)).sum();
    println!("cg: residual {:.1e}", r.sqrt());

    let lo = gen_eig_min(&s, &m, 1e-8, 0)?;
    let hi = gen_eig_max(&s, &m, 1e-8, 0)?;
    println!("spectrum of S against M: [{:.6}, {:.3}]", lo.eigenvalue, hi.eigenvalue);
    println!("best Poincare-Korn constant 1/sqrt(min) = {:.6}", lo.eigenvalue.powf(-0.5));
    Ok(())
}
