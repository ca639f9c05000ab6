//! Discrete gradient, divergence, Laplacian and curl on grid masks.
//!
//! Every operator is built from one-dimensional first differences. A
//! [`StencilFamily`] picks the difference used for gradients and the one used
//! for divergences:
//!
//! | family      | gradient | divergence |
//! |-------------|----------|------------|
//! | `Forward`   | forward  | forward    |
//! | `Backward`  | backward | backward   |
//! | `Centered`  | centered | centered   |
//! | `DualPair`  | forward  | backward   |
//!
//! Constant-coefficient differences commute on the lattice, so any single
//! family satisfies operator-algebra identities (the Helmholtz-type pair,
//! `curl curl = ∇div − Δ`) exactly. The dual pair makes `div` the exact
//! negative transpose of `∇` under the node-sum quadrature, i.e. discrete
//! integration by parts holds to rounding.
//!
//! Ghost values: fields flagged compact are zero-extended past the mask;
//! other fields use one-sided differences where a stencil leaves the mask.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KornError, Result};
use crate::field::{inner, inner_vec, lp_norm, GridFunction, MatrixField, ScalarField, VectorField};
use crate::geometry::{box_offsets, offset_index, DomainMask};

/// A first difference along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difference {
    Forward,
    Backward,
    Centered,
}

impl Difference {
    /// The difference whose divergence is the negative transpose of this
    /// difference's gradient.
    pub fn adjoint(self) -> Self {
        match self {
            Difference::Forward => Difference::Backward,
            Difference::Backward => Difference::Forward,
            Difference::Centered => Difference::Centered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilFamily {
    #[serde(alias = "uniform-forward", alias = "forward")]
    Forward,
    #[serde(alias = "uniform-backward", alias = "backward")]
    Backward,
    Centered,
    DualPair,
}

impl StencilFamily {
    pub const ALL: [StencilFamily; 4] = [
        StencilFamily::Forward,
        StencilFamily::Backward,
        StencilFamily::Centered,
        StencilFamily::DualPair,
    ];

    pub fn gradient(self) -> Difference {
        match self {
            StencilFamily::Forward | StencilFamily::DualPair => Difference::Forward,
            StencilFamily::Backward => Difference::Backward,
            StencilFamily::Centered => Difference::Centered,
        }
    }

    pub fn divergence(self) -> Difference {
        match self {
            StencilFamily::Forward => Difference::Forward,
            StencilFamily::Backward | StencilFamily::DualPair => Difference::Backward,
            StencilFamily::Centered => Difference::Centered,
        }
    }

    /// Gradient and divergence use the same difference.
    pub fn is_uniform(self) -> bool {
        self.gradient() == self.divergence()
    }

    pub fn name(self) -> &'static str {
        match self {
            StencilFamily::Forward => "forward",
            StencilFamily::Backward => "backward",
            StencilFamily::Centered => "centered",
            StencilFamily::DualPair => "dual-pair",
        }
    }
}

impl std::str::FromStr for StencilFamily {
    type Err = KornError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "uniform-forward" => Ok(StencilFamily::Forward),
            "backward" | "uniform-backward" => Ok(StencilFamily::Backward),
            "centered" => Ok(StencilFamily::Centered),
            "dual-pair" | "dual" => Ok(StencilFamily::DualPair),
            other => Err(KornError::Parse(format!("unknown stencil family '{other}'"))),
        }
    }
}

impl std::fmt::Display for StencilFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// First difference of component `comp` of node-major `values` along `axis`.
#[allow(clippy::too_many_arguments)]
fn difference_at(
    mask: &DomainMask,
    values: &[f64],
    comps: usize,
    comp: usize,
    node: usize,
    axis: usize,
    diff: Difference,
    zero_ghost: bool,
) -> f64 {
    let h = mask.spacing();
    let get = |n: usize| values[n * comps + comp];
    let next = mask.inside_neighbor(node, axis, true);
    let prev = mask.inside_neighbor(node, axis, false);
    let here = get(node);
    if zero_ghost {
        let nv = next.map_or(0.0, get);
        let pv = prev.map_or(0.0, get);
        return match diff {
            Difference::Forward => (nv - here) / h,
            Difference::Backward => (here - pv) / h,
            Difference::Centered => (nv - pv) / (2.0 * h),
        };
    }
    match (diff, next, prev) {
        (Difference::Forward, Some(n), _) | (Difference::Backward, Some(n), None) => {
            (get(n) - here) / h
        }
        (Difference::Backward, _, Some(p)) | (Difference::Forward, None, Some(p)) => {
            (here - get(p)) / h
        }
        (Difference::Centered, Some(n), Some(p)) => (get(n) - get(p)) / (2.0 * h),
        (Difference::Centered, Some(n), None) => (get(n) - here) / h,
        (Difference::Centered, None, Some(p)) => (here - get(p)) / h,
        _ => 0.0,
    }
}

/// Gradient with an explicit difference: entry `(i, j)` is `∂_i u_j`.
pub fn grad_with(u: &VectorField, diff: Difference) -> MatrixField {
    let mask = u.mask();
    let n = mask.dim();
    let mut out = vec![0.0; mask.node_count() * n * n];
    for node in mask.inside_nodes() {
        for i in 0..n {
            for j in 0..n {
                out[node * n * n + i * n + j] =
                    difference_at(mask, u.values(), n, j, node, i, diff, u.is_compact());
            }
        }
    }
    MatrixField::from_raw(mask.clone(), out, u.is_compact())
}

/// Matrix whose columns are the discrete gradients of the components of `u`.
pub fn grad(u: &VectorField, fam: StencilFamily) -> MatrixField {
    grad_with(u, fam.gradient())
}

/// Jacobian `∇ᵀu`: entry `(i, j)` is `∂_j u_i`.
pub fn grad_transpose(u: &VectorField, fam: StencilFamily) -> MatrixField {
    grad(u, fam).transpose()
}

pub fn sym_grad(u: &VectorField, fam: StencilFamily) -> MatrixField {
    grad(u, fam).sym_part()
}

pub fn skw_grad(u: &VectorField, fam: StencilFamily) -> MatrixField {
    grad(u, fam).skw_part()
}

/// Divergence of a vector field with an explicit difference.
pub fn div_vec_with(u: &VectorField, diff: Difference) -> ScalarField {
    let mask = u.mask();
    let n = mask.dim();
    let mut out = vec![0.0; mask.node_count()];
    for node in mask.inside_nodes() {
        out[node] = (0..n)
            .map(|k| difference_at(mask, u.values(), n, k, node, k, diff, u.is_compact()))
            .sum();
    }
    ScalarField::from_raw(mask.clone(), out, u.is_compact())
}

/// Divergence with the family's divergence difference. For uniform
/// families this is the trace of [`grad`].
pub fn div_vec(u: &VectorField, fam: StencilFamily) -> ScalarField {
    div_vec_with(u, fam.divergence())
}

/// Column-wise divergence: component `i` is `Σ_k ∂_k Φ_{k i}`.
pub fn div_mat(phi: &MatrixField, fam: StencilFamily) -> VectorField {
    let mask = phi.mask();
    let n = mask.dim();
    let diff = fam.divergence();
    let mut out = vec![0.0; mask.node_count() * n];
    for node in mask.inside_nodes() {
        for i in 0..n {
            out[node * n + i] = (0..n)
                .map(|k| {
                    difference_at(mask, phi.values(), n * n, k * n + i, node, k, diff, phi.is_compact())
                })
                .sum();
        }
    }
    VectorField::from_raw(mask.clone(), out, phi.is_compact())
}

pub fn div_sym(phi: &MatrixField, fam: StencilFamily) -> VectorField {
    div_mat(&phi.sym_part(), fam)
}

pub fn div_skw(phi: &MatrixField, fam: StencilFamily) -> VectorField {
    div_mat(&phi.skw_part(), fam)
}

/// Gradient of a scalar field.
pub fn grad_scalar(f: &ScalarField, fam: StencilFamily) -> VectorField {
    let mask = f.mask();
    let n = mask.dim();
    let diff = fam.gradient();
    let mut out = vec![0.0; mask.node_count() * n];
    for node in mask.inside_nodes() {
        for k in 0..n {
            out[node * n + k] = difference_at(mask, f.values(), 1, 0, node, k, diff, f.is_compact());
        }
    }
    VectorField::from_raw(mask.clone(), out, f.is_compact())
}

/// `div_mat ∘ grad` with the family's differences (`D⁻D⁺` for the dual pair).
pub fn laplacian(u: &VectorField, fam: StencilFamily) -> VectorField {
    div_mat(&grad(u, fam), fam)
}

/// Curl of a 3D vector field using the family's gradient difference.
pub fn curl3(u: &VectorField, fam: StencilFamily) -> Result<VectorField> {
    curl3_with(u, fam.gradient())
}

pub fn curl3_with(u: &VectorField, diff: Difference) -> Result<VectorField> {
    if u.dim() != 3 {
        return Err(KornError::Dimension(format!(
            "curl is defined for N = 3, got N = {}",
            u.dim()
        )));
    }
    let g = grad_with(u, diff);
    let mask = u.mask();
    let mut out = vec![0.0; mask.node_count() * 3];
    for node in mask.inside_nodes() {
        // (curl u)_i = ∂_j u_k − ∂_k u_j, entry (a, b) of g is ∂_a u_b.
        out[node * 3] = g.entry(node, 1, 2) - g.entry(node, 2, 1);
        out[node * 3 + 1] = g.entry(node, 2, 0) - g.entry(node, 0, 2);
        out[node * 3 + 2] = g.entry(node, 0, 1) - g.entry(node, 1, 0);
    }
    Ok(VectorField::from_raw(mask.clone(), out, u.is_compact()))
}

/// Relative sup-norm residual of `curl curl u = −2 div_skw ∇_skw u` in 3D,
/// on [`deep_nodes`] for fields that are not compactly supported. The outer
/// curl takes the family's divergence difference, as `div_skw` does.
pub fn curl_identity_residual(u: &VectorField, fam: StencilFamily) -> Result<f64> {
    let cc = curl3_with(&curl3(u, fam)?, fam.divergence())?;
    let skw = div_skw(&skw_grad(u, fam), fam).scaled(-2.0);
    let nodes: Vec<usize> = if u.is_compact() {
        u.mask().inside_nodes().collect()
    } else {
        deep_nodes(u.mask())
    };
    Ok(sup_relative(&nodes, 3, &[&cc, &skw], &[1.0, -1.0]))
}

/// Relative defect of discrete integration by parts,
/// `|∫∇u : Φ + ∫u · div Φ| / (‖∇u‖‖Φ‖ + ‖u‖‖div Φ‖)`.
pub fn adjointness_defect(u: &VectorField, phi: &MatrixField, fam: StencilFamily) -> Result<f64> {
    if !u.is_compact() || !phi.is_compact() {
        return Err(KornError::Contract(
            "adjointness defect needs compactly supported fields".into(),
        ));
    }
    let g = grad(u, fam);
    let d = div_mat(phi, fam);
    let lhs = inner(&g, phi)?;
    let rhs = inner_vec(u, &d)?;
    let scale = lp_norm(&g, 2.0, None)? * lp_norm(phi, 2.0, None)?
        + lp_norm(u, 2.0, None)? * lp_norm(&d, 2.0, None)?;
    Ok(if scale == 0.0 {
        (lhs + rhs).abs()
    } else {
        (lhs + rhs).abs() / scale
    })
}

/// Residual norms of the Helmholtz-type pair and of the Korn identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `−Δu = −∇div u − 2 div_skw ∇_skw u`, relative sup-norm.
    pub hodge_skw: f64,
    /// `−Δu = +∇div u − 2 div_sym ∇_sym u`, relative sup-norm.
    pub hodge_sym: f64,
    /// `∫|∇_sym u|² = ½∫|∇u|² + ½∫|div u|²`, relative; `None` unless `u` is
    /// compactly supported.
    pub korn: Option<f64>,
}

/// JSON record `{identity, family, h, residual}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub identity: String,
    pub family: StencilFamily,
    pub h: f64,
    pub residual: f64,
}

impl IdentityResiduals {
    pub fn records(&self, family: StencilFamily, h: f64) -> Vec<ResidualRecord> {
        let mut out = vec![
            ResidualRecord {
                identity: "hodge-skw".into(),
                family,
                h,
                residual: self.hodge_skw,
            },
            ResidualRecord {
                identity: "hodge-sym".into(),
                family,
                h,
                residual: self.hodge_sym,
            },
        ];
        if let Some(k) = self.korn {
            out.push(ResidualRecord {
                identity: "korn".into(),
                family,
                h,
                residual: k,
            });
        }
        out
    }
}

/// Nodes at which every second-order composition of first differences sees
/// an untruncated stencil: the whole L∞ ball of radius 2 is inside.
pub fn deep_nodes(mask: &DomainMask) -> Vec<usize> {
    let grid = mask.grid();
    let offsets = box_offsets(mask.dim(), 2);
    mask.inside_nodes()
        .filter(|&node| {
            let idx = grid.multi_index(node);
            offsets.iter().all(|off| {
                offset_index(&idx, off, grid.extent())
                    .map(|nb| mask.is_inside(grid.linear_index(&nb)))
                    .unwrap_or(false)
            })
        })
        .collect()
}

fn sup_relative(nodes: &[usize], n: usize, terms: &[&VectorField], signs: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for &node in nodes {
        for i in 0..n {
            let mut r = 0.0;
            let mut s = 0.0;
            for (t, sign) in terms.iter().zip(signs) {
                let v = t.values()[node * n + i];
                r += sign * v;
                s += v.abs();
            }
            worst = worst.max(r.abs());
            scale = scale.max(s);
        }
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Evaluates the identity residuals with one stencil family.
///
/// Compactly supported fields are checked on every inside node; other fields
/// on [`deep_nodes`], away from one-sided boundary stencils. The Korn
/// identity takes its divergence with the adjoint of the gradient
/// difference (backward for a forward gradient), the convention under
/// which summation by parts closes.
pub fn identity_residuals(u: &VectorField, fam: StencilFamily) -> Result<IdentityResiduals> {
    let mask = u.mask().clone();
    let n = mask.dim();
    let nodes: Vec<usize> = if u.is_compact() {
        mask.inside_nodes().collect()
    } else {
        deep_nodes(&mask)
    };
    if nodes.is_empty() {
        return Err(KornError::DegenerateDomain(
            "no nodes with complete second-order stencils".into(),
        ));
    }
    let lap = laplacian(u, fam);
    let grad_div = grad_scalar(&div_vec(u, fam), fam);
    let g = grad(u, fam);
    let skw = div_skw(&g.skw_part(), fam).scaled(2.0);
    let sym = div_sym(&g.sym_part(), fam).scaled(2.0);
    // −Δu + ∇div u + 2 div_skw ∇_skw u = 0
    let hodge_skw = sup_relative(&nodes, n, &[&lap, &grad_div, &skw], &[-1.0, 1.0, 1.0]);
    // −Δu − ∇div u + 2 div_sym ∇_sym u = 0
    let hodge_sym = sup_relative(&nodes, n, &[&lap, &grad_div, &sym], &[-1.0, -1.0, 1.0]);
    let korn = if u.is_compact() {
        Some(korn_identity_residual(u, fam.gradient(), fam.gradient().adjoint())?)
    } else {
        None
    };
    Ok(IdentityResiduals {
        hodge_skw,
        hodge_sym,
        korn,
    })
}

/// `|∫|∇_sym u|² − ½∫|∇u|² − ½∫|div u|²|` relative to the larger side, with
/// the gradient and the divergence taken with the given differences.
pub fn korn_identity_residual(
    u: &VectorField,
    grad_diff: Difference,
    div_diff: Difference,
) -> Result<f64> {
    let g = grad_with(u, grad_diff);
    let sym = lp_norm(&g.sym_part(), 2.0, None)?.powi(2);
    let full = lp_norm(&g, 2.0, None)?.powi(2);
    let div = lp_norm(&div_vec_with(u, div_diff), 2.0, None)?.powi(2);
    let rhs = 0.5 * (full + div);
    let scale = sym.max(rhs);
    Ok(if scale == 0.0 {
        0.0
    } else {
        (sym - rhs).abs() / scale
    })
}

/// Pointwise excess `max_x (|div u| − √N |∇_sym u|)`, relative to
/// `max(1, √N |∇_sym u|)` at each node, for a uniform family.
pub fn div_trace_excess(u: &VectorField, fam: StencilFamily) -> f64 {
    let mask: &Arc<DomainMask> = u.mask();
    let g = grad(u, fam);
    let sym = g.sym_part();
    let div = g.trace();
    let root_n = (mask.dim() as f64).sqrt();
    mask.inside_nodes()
        .map(|node| {
            let bound = root_n * sym.pointwise_norm(node);
            (div.value(node).abs() - bound) / bound.max(1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
