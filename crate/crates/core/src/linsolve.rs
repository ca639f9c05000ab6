//! Sparse Gram matrices of the discrete operators, Jacobi-preconditioned
//! conjugate gradients and a generalized symmetric eigensolver.
//!
//! Degrees of freedom are ordered lexicographically by node (axis 0
//! slowest) and then by component. With [`BoundaryCondition::ZeroBoundary`]
//! only interior nodes carry unknowns and the field is zero-extended; with
//! [`BoundaryCondition::Free`] every inside node does and boundary stencils
//! are one-sided.
//!
//! Operator matrices are obtained by probing: the diffops routines are
//! applied to sums of unit vectors whose nodes are three apart along some
//! axis, so their one-node stencil footprints never overlap.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffops::{grad, StencilFamily};
use crate::error::{KornError, Result};
use crate::field::{GridFunction, VectorField};
use crate::geometry::DomainMask;

/// Largest number of unknowns [`assemble`] accepts.
pub const MAX_DOFS: usize = 8_000_000;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in input order. A `symmetric` claim is verified entrywise.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> Result<Self> {
        if let Some(t) = triplets.iter().find(|t| t.0 >= rows || t.1 >= cols) {
            return Err(KornError::Dimension(format!(
                "entry ({}, {}) outside a {rows}x{cols} matrix",
                t.0, t.1
            )));
        }
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(KornError::Contract("matrix entries must be finite".into()));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let op = Self {
            rows,
            cols,
            indptr,
            indices,
            data,
            symmetric: false,
        };
        if symmetric {
            op.into_symmetric()
        } else {
            Ok(op)
        }
    }

    fn into_symmetric(mut self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(KornError::Contract("a symmetric matrix must be square".into()));
        }
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.get(self.indices[k], r) != self.data[k] {
                    return Err(KornError::Contract(format!(
                        "matrix is not symmetric at ({r}, {})",
                        self.indices[k]
                    )));
                }
            }
        }
        self.symmetric = true;
        Ok(self)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: diag.to_vec(),
            symmetric: true,
        }
    }

    /// Sparse copy of a dense matrix, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>, symmetric: bool) -> Result<Self> {
        let mut t = vec![];
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t, symmetric)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[k])] += self.data[k];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.indptr[row]..self.indptr[row + 1];
        match self.indices[span.clone()].binary_search(&col) {
            Ok(k) => self.data[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[row]..self.indptr[row + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`. Rows are split across threads; each row sums in a fixed
    /// order, so the result does not depend on scheduling.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec: input length");
        assert_eq!(y.len(), self.rows, "matvec: output length");
        let row = |r: usize| -> f64 {
            (self.indptr[r]..self.indptr[r + 1])
                .map(|k| self.data[k] * x[self.indices[k]])
                .sum()
        };
        if self.nnz() > 50_000 {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, out)| *out = row(r));
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.push((c, r, v));
            }
        }
        let mut out = Self::from_triplets(self.cols, self.rows, t, false)
            .expect("transpose of a valid matrix");
        out.symmetric = self.symmetric;
        out
    }

    /// `a A + b B`; symmetric when both inputs are.
    pub fn combine(&self, a: f64, other: &SparseOperator, b: f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(KornError::Dimension("matrix shapes differ".into()));
        }
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            t.extend(self.row(r).map(|(c, v)| (r, c, a * v)));
            t.extend(other.row(r).map(|(c, v)| (r, c, b * v)));
        }
        Self::from_triplets(self.rows, self.cols, t, self.symmetric && other.symmetric)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    /// Weighted normal matrix `Aᵀ diag(w) A` with `w` per row of `A`.
    ///
    /// Entry `(a, b)` sums `w_r (A_ra A_rb)` over rows in increasing order,
    /// which is the same floating-point sum for `(b, a)`: the result is
    /// symmetric exactly.
    pub fn weighted_normal(&self, w: &[f64]) -> Result<Self> {
        if w.len() != self.rows {
            return Err(KornError::Dimension("row weights length".into()));
        }
        let at = self.transpose();
        let rows: Vec<Vec<(usize, f64)>> = (0..self.cols)
            .into_par_iter()
            .map(|a| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                let mut slot: std::collections::BTreeMap<usize, usize> = Default::default();
                for (r, va) in at.row(a) {
                    for (b, vb) in self.row(r) {
                        let term = w[r] * (va * vb);
                        match slot.get(&b) {
                            Some(&i) => acc[i].1 += term,
                            None => {
                                slot.insert(b, acc.len());
                                acc.push((b, term));
                            }
                        }
                    }
                }
                acc.sort_by_key(|e| e.0);
                acc
            })
            .collect();
        let mut indptr = vec![0];
        let mut indices = vec![];
        let mut data = vec![];
        for row in rows {
            for (c, v) in row {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.cols,
            cols: self.cols,
            indptr,
            indices,
            data,
            symmetric: false,
        }
        .into_symmetric()
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> Result<()> {
        let kind = if self.symmetric { "symmetric" } else { "general" };
        writeln!(out, "%%MatrixMarket matrix coordinate real {kind}")?;
        let entries: Vec<(usize, usize, f64)> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .filter(|&(r, c, _)| !self.symmetric || c <= r)
            .collect();
        writeln!(out, "{} {} {}", self.rows, self.cols, entries.len())?;
        for (r, c, v) in entries {
            writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    /// Unknowns on interior nodes only, zero extension beyond.
    ZeroBoundary,
    /// Unknowns on every inside node, one-sided boundary stencils.
    Free,
}

/// Node/component numbering of the unknowns.
#[derive(Debug, Clone)]
pub struct DofMap {
    mask: Arc<DomainMask>,
    bc: BoundaryCondition,
    nodes: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mask: Arc<DomainMask>, bc: BoundaryCondition) -> Self {
        let nodes: Vec<usize> = match bc {
            BoundaryCondition::ZeroBoundary => mask.interior_nodes().collect(),
            BoundaryCondition::Free => mask.inside_nodes().collect(),
        };
        let mut slot = vec![None; mask.node_count()];
        for (k, &n) in nodes.iter().enumerate() {
            slot[n] = Some(k);
        }
        Self {
            mask,
            bc,
            nodes,
            slot,
        }
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn len(&self) -> usize {
        self.nodes.len() * self.mask.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Unknown index of component `comp` at `node`, if it carries one.
    pub fn index(&self, node: usize, comp: usize) -> Option<usize> {
        self.slot[node].map(|k| k * self.mask.dim() + comp)
    }

    pub fn to_field(&self, x: &[f64]) -> VectorField {
        assert_eq!(x.len(), self.len(), "unknown vector length");
        let n = self.mask.dim();
        let mut values = vec![0.0; self.mask.node_count() * n];
        for (k, &node) in self.nodes.iter().enumerate() {
            values[node * n..(node + 1) * n].copy_from_slice(&x[k * n..(k + 1) * n]);
        }
        VectorField::from_raw(
            self.mask.clone(),
            values,
            self.bc == BoundaryCondition::ZeroBoundary,
        )
    }

    pub fn from_field(&self, u: &VectorField) -> Vec<f64> {
        let n = self.mask.dim();
        let mut x = vec![0.0; self.len()];
        for (k, &node) in self.nodes.iter().enumerate() {
            x[k * n..(k + 1) * n].copy_from_slice(u.at(node));
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Grad,
    SymGrad,
    Mass,
}

/// Matrix of a linear map from unknowns to node-major values with
/// `out_comps` entries per grid node, recovered by probing.
fn probe<F>(dofs: &DofMap, out_comps: usize, apply: F) -> Result<SparseOperator>
where
    F: Fn(&VectorField) -> Vec<f64> + Sync,
{
    let mask = dofs.mask();
    let grid = mask.grid();
    let n = mask.dim();
    let colors = 3usize.pow(n as u32);
    let probes: Vec<(usize, usize)> = (0..colors)
        .flat_map(|c| (0..n).map(move |comp| (c, comp)))
        .collect();
    let color_digits = |c: usize| -> Vec<usize> {
        let mut d = vec![0; n];
        let mut c = c;
        for axis in (0..n).rev() {
            d[axis] = c % 3;
            c /= 3;
        }
        d
    };
    let triplet_blocks: Vec<Vec<(usize, usize, f64)>> = probes
        .par_iter()
        .map(|&(color, comp)| {
            let digits = color_digits(color);
            let mut x = vec![0.0; dofs.len()];
            let mut any = false;
            for &node in dofs.nodes() {
                let idx = grid.multi_index(node);
                if idx.iter().zip(&digits).all(|(i, d)| i % 3 == *d) {
                    x[dofs.index(node, comp).unwrap()] = 1.0;
                    any = true;
                }
            }
            if !any {
                return vec![];
            }
            let out = apply(&dofs.to_field(&x));
            let mut block = vec![];
            let mut owner = vec![0usize; n];
            for node in mask.inside_nodes() {
                let idx = grid.multi_index(node);
                let mut ok = true;
                for axis in 0..n {
                    // The unique coordinate within one step with this color.
                    let i = idx[axis];
                    let o = (3 + digits[axis] - i % 3) % 3;
                    let cand = match o {
                        0 => Some(i),
                        1 => Some(i + 1),
                        _ => i.checked_sub(1),
                    };
                    match cand {
                        Some(c) if c < grid.extent()[axis] => owner[axis] = c,
                        _ => ok = false,
                    }
                }
                if !ok {
                    continue;
                }
                let Some(col) = dofs.index(grid.linear_index(&owner), comp) else {
                    continue;
                };
                for r in 0..out_comps {
                    let v = out[node * out_comps + r];
                    if v != 0.0 {
                        block.push((node * out_comps + r, col, v));
                    }
                }
            }
            block
        })
        .collect();
    let triplets = triplet_blocks.into_iter().flatten().collect();
    SparseOperator::from_triplets(mask.node_count() * out_comps, dofs.len(), triplets, false)
}

fn check_size(dofs: &DofMap) -> Result<()> {
    if dofs.len() > MAX_DOFS {
        return Err(KornError::Parameter(format!(
            "{} unknowns exceed the cap of {MAX_DOFS}",
            dofs.len()
        )));
    }
    if dofs.is_empty() {
        return Err(KornError::DegenerateDomain("no unknowns".into()));
    }
    Ok(())
}

/// Rectangular matrix of `grad` or `sym_grad` from unknowns to node-major
/// matrix entries (`N²` rows per grid node). `Mass` maps to the field
/// values themselves.
pub fn operator_map(
    op: OperatorKind,
    dofs: &DofMap,
    fam: StencilFamily,
) -> Result<SparseOperator> {
    check_size(dofs)?;
    let n = dofs.mask().dim();
    match op {
        OperatorKind::Grad => probe(dofs, n * n, |u| grad(u, fam).values().to_vec()),
        OperatorKind::SymGrad => probe(dofs, n * n, |u| grad(u, fam).sym_part().values().to_vec()),
        OperatorKind::Mass => probe(dofs, n, |u| u.values().to_vec()),
    }
}

/// Gram matrix `h^N Dᵀ D` of an operator over the given unknowns. For
/// `Mass` this is `h^N I`.
pub fn assemble(
    op: OperatorKind,
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    bc: BoundaryCondition,
) -> Result<SparseOperator> {
    assemble_weighted(op, mask, fam, bc, None)
}

/// As [`assemble`] with a nonnegative per-node quadrature weight.
pub fn assemble_weighted(
    op: OperatorKind,
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    bc: BoundaryCondition,
    node_weight: Option<&[f64]>,
) -> Result<SparseOperator> {
    let dofs = DofMap::new(mask.clone(), bc);
    check_size(&dofs)?;
    if let Some(w) = node_weight {
        if w.len() != mask.node_count() {
            return Err(KornError::Dimension("node weights length".into()));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(KornError::Parameter("weights must be nonnegative".into()));
        }
    }
    let hn = mask.grid().cell_volume();
    let weight_of = |node: usize| hn * node_weight.map_or(1.0, |w| w[node]);
    if op == OperatorKind::Mass {
        let n = mask.dim();
        let diag: Vec<f64> = dofs
            .nodes()
            .iter()
            .flat_map(|&node| std::iter::repeat(weight_of(node)).take(n))
            .collect();
        return Ok(SparseOperator::diagonal_matrix(&diag));
    }
    let d = operator_map(op, &dofs, fam)?;
    let per_node = d.rows() / mask.node_count();
    let w: Vec<f64> = (0..d.rows()).map(|r| weight_of(r / per_node)).collect();
    d.weighted_normal(&w)
}

/// Options for [`cg_solve_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
    /// Iteration cap; `None` means ten times the system size.
    pub max_iter: Option<usize>,
    /// Diagonal (Jacobi) preconditioning.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            jacobi: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` to relative
/// residual `tol`.
pub fn cg_solve(a: &SparseOperator, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    cg_solve_with(
        a,
        b,
        None,
        &CgOptions {
            tol,
            ..CgOptions::default()
        },
    )
    .map(|s| s.x)
}

pub fn cg_solve_with(
    a: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<CgSolution> {
    let n = a.rows();
    if a.cols() != n || b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(KornError::Dimension("system shapes differ".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(KornError::Parameter("tolerance must be positive".into()));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let cap = opts.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = if opts.jacobi {
        a.diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    } else {
        vec![1.0; n]
    };
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = b.to_vec();
    if x0.is_some() {
        axpy(-1.0, &a.apply(&x), &mut r);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let mut res = norm(&r) / bnorm;
        if res <= opts.tol {
            // Confirm against the true residual; recurrences drift.
            let mut t = b.to_vec();
            axpy(-1.0, &a.apply(&x), &mut t);
            res = norm(&t) / bnorm;
            if res <= opts.tol {
                return Ok(CgSolution {
                    x,
                    iterations,
                    residual: res,
                });
            }
            r = t;
            z = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        if iterations >= cap {
            return Err(KornError::NonConvergence {
                iterations,
                residual: res,
            });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(KornError::Contract(
                "conjugate gradients met a non-positive curvature direction".into(),
            ));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        z.iter_mut()
            .zip(&r)
            .zip(&inv_diag)
            .for_each(|((z, r), d)| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        iterations += 1;
    }
}

/// Eigenpair of `A x = λ B x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub eigenvalue: f64,
    /// `B`-normalized eigenvector over the unknowns.
    pub eigenvector: Vec<f64>,
    /// `‖Ax − λBx‖ / (‖Ax‖ + |λ| ‖Bx‖)`.
    pub residual: f64,
    /// Number of subspace expansions.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    /// Tolerance of the inner solves with `B`.
    pub cg_tol: f64,
    /// Expansion cap; `None` means ten times the system size.
    pub max_iter: Option<usize>,
    pub seed: u64,
    /// Subspace size that triggers a restart.
    pub basis: usize,
    /// Ritz vectors kept across a restart.
    pub keep: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            cg_tol: 1e-10,
            max_iter: None,
            seed: 0,
            basis: 40,
            keep: 6,
        }
    }
}

/// Largest eigenvalue of `A x = λ B x` (`A` symmetric PSD, `B` SPD).
pub fn gen_eig_max(a: &SparseOperator, b: &SparseOperator, tol: f64, seed: u64) -> Result<EigenResult> {
    gen_eig_max_with(
        a,
        b,
        &EigenOptions {
            tol,
            seed,
            ..EigenOptions::default()
        },
    )
}

/// Smallest eigenvalue of `A x = λ B x` (both SPD), computed as the
/// reciprocal of the largest eigenvalue of the swapped pencil.
pub fn gen_eig_min(a: &SparseOperator, b: &SparseOperator, tol: f64, seed: u64) -> Result<EigenResult> {
    gen_eig_min_with(
        a,
        b,
        &EigenOptions {
            tol,
            seed,
            ..EigenOptions::default()
        },
    )
}

pub fn gen_eig_min_with(
    a: &SparseOperator,
    b: &SparseOperator,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    let mut r = gen_eig_max_with(b, a, opts)?;
    if !(r.eigenvalue > 0.0) {
        return Err(KornError::Contract(
            "pencil is not definite: B x = θ A x has no positive eigenvalue".into(),
        ));
    }
    // The relative residual is invariant under swapping the pencil and
    // inverting the eigenvalue; only the normalization changes.
    r.eigenvalue = 1.0 / r.eigenvalue;
    let bx = b.apply(&r.eigenvector);
    let s = dot(&r.eigenvector, &bx).sqrt();
    r.eigenvector.iter_mut().for_each(|v| *v /= s);
    Ok(r)
}

/// Rayleigh–Ritz on a `B`-orthonormal basis grown by `B⁻¹`-preconditioned
/// residuals, which spans the Krylov space of `B⁻¹A` (Lanczos in the
/// `B` inner product), with thick restarts.
pub fn gen_eig_max_with(
    a: &SparseOperator,
    b: &SparseOperator,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n || b.cols() != n {
        return Err(KornError::Dimension("pencil shapes differ".into()));
    }
    if n == 0 {
        return Err(KornError::Dimension("empty pencil".into()));
    }
    if !(opts.tol > 0.0) || opts.keep == 0 || opts.basis <= opts.keep {
        return Err(KornError::Parameter("invalid eigensolver options".into()));
    }
    let cap = opts.max_iter.unwrap_or(10 * n);
    let cg = CgOptions {
        tol: opts.cg_tol,
        max_iter: None,
        jacobi: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis = Basis::default();
    let start: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    basis.push(start, a, b);
    if basis.len() == 0 {
        return Err(KornError::Contract("B vanishes on the start vector".into()));
    }
    let max_dim = opts.basis.min(n);
    let mut iterations = 0;
    loop {
        let (theta, y) = basis.top_ritz(1).pop().expect("nonempty basis");
        let x = basis.combine(&y, Which::Q);
        let ax = basis.combine(&y, Which::A);
        let bx = basis.combine(&y, Which::B);
        let mut r = ax.clone();
        axpy(-theta, &bx, &mut r);
        let scale = norm(&ax) + theta.abs() * norm(&bx);
        let residual = if scale == 0.0 { 0.0 } else { norm(&r) / scale };
        if residual <= opts.tol || (basis.len() == n && residual <= 1e3 * opts.tol) {
            return Ok(EigenResult {
                eigenvalue: theta,
                eigenvector: x,
                residual,
                iterations,
            });
        }
        if iterations >= cap {
            return Err(KornError::NonConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;
        let w = cg_solve_with(b, &r, None, &cg)?.x;
        if basis.len() >= max_dim {
            let keep = opts.keep.min(max_dim - 1);
            let ritz = basis.top_ritz(keep);
            let mut fresh = Basis::default();
            for (_, y) in ritz {
                fresh.push(basis.combine(&y, Which::Q), a, b);
            }
            basis = fresh;
        }
        if !basis.push(w, a, b) {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            basis.push(v, a, b);
        }
    }
}

#[derive(Default)]
struct Basis {
    q: Vec<Vec<f64>>,
    aq: Vec<Vec<f64>>,
    bq: Vec<Vec<f64>>,
}

#[derive(Clone, Copy)]
enum Which {
    Q,
    A,
    B,
}

impl Basis {
    fn len(&self) -> usize {
        self.q.len()
    }

    /// `B`-orthogonalizes `v` against the basis (twice) and appends it
    /// unless it is numerically dependent.
    fn push(&mut self, mut v: Vec<f64>, a: &SparseOperator, b: &SparseOperator) -> bool {
        let before = b.quadratic_form(&v).max(0.0).sqrt();
        if before == 0.0 || !before.is_finite() {
            return false;
        }
        for _ in 0..2 {
            for (q, bq) in self.q.iter().zip(&self.bq) {
                let c = dot(bq, &v);
                axpy(-c, q, &mut v);
            }
        }
        let bv = b.apply(&v);
        let nrm = dot(&v, &bv).max(0.0).sqrt();
        if !(nrm > 1e-10 * before) {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= nrm);
        let bv: Vec<f64> = bv.iter().map(|x| x / nrm).collect();
        self.aq.push(a.apply(&v));
        self.bq.push(bv);
        self.q.push(v);
        true
    }

    /// The `k` largest Ritz pairs, largest first.
    fn top_ritz(&self, k: usize) -> Vec<(f64, Vec<f64>)> {
        let m = self.len();
        let h = DMatrix::from_fn(m, m, |i, j| {
            0.5 * (dot(&self.q[i], &self.aq[j]) + dot(&self.q[j], &self.aq[i]))
        });
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        order
            .into_iter()
            .take(k)
            .map(|i| {
                let y: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                (eig.eigenvalues[i], y)
            })
            .collect()
    }

    fn combine(&self, y: &[f64], which: Which) -> Vec<f64> {
        let src = match which {
            Which::Q => &self.q,
            Which::A => &self.aq,
            Which::B => &self.bq,
        };
        let mut out = vec![0.0; src[0].len()];
        for (c, v) in y.iter().zip(src) {
            axpy(*c, v, &mut out);
        }
        out
    }
}
