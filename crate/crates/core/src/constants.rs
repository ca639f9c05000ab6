//! Discrete Korn and Poincaré-Korn constants, and the explicit constants
//! `C_{p,N}`, `κ_{p,Ω}`, `κ_{p,∂Ω}`.
//!
//! For `p = 2` the constants are generalized eigenvalues of Gram matrices
//! and are sharp on the grid. For other `p` the discrete quotient is
//! maximized by preconditioned nonlinear conjugate gradients; the result is
//! a lower bound for the grid constant.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffops::StencilFamily;
use crate::error::{KornError, Result};
use crate::field::{GridFunction, ScalarField, VectorField};
use crate::geometry::{DomainMask, GridSpec};
use crate::linsolve::{
    assemble, assemble_weighted, cg_solve_with, dot, gen_eig_max_with, gen_eig_min_with,
    operator_map, BoundaryCondition, CgOptions, DofMap, EigenOptions, OperatorKind,
    SparseOperator,
};

/// `C_{p,N}`, `κ_{p,Ω} = diam·C_{p,N}` and `κ_{p,∂Ω} = p(p+1)/(p+N)·diam`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperConstants {
    pub p: f64,
    pub dim: usize,
    pub diam: f64,
    pub c_pn: f64,
    pub kappa_omega: f64,
    pub kappa_boundary: f64,
}

pub fn paper_constants(p: f64, dim: usize, diam: f64) -> Result<PaperConstants> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(KornError::Parameter(format!("p must be finite and >= 1, got {p}")));
    }
    if !(1..=3).contains(&dim) {
        return Err(KornError::Parameter(format!("N must be 1, 2 or 3, got {dim}")));
    }
    if !(diam > 0.0 && diam.is_finite()) {
        return Err(KornError::Parameter(format!("diameter must be positive, got {diam}")));
    }
    let n = dim as f64;
    let c_pn = (2.0 + (p - 2.0).abs() + n.sqrt()) * p / (p + n);
    Ok(PaperConstants {
        p,
        dim,
        diam,
        c_pn,
        kappa_omega: diam * c_pn,
        kappa_boundary: p * (p + 1.0) / (p + n) * diam,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KornMode {
    /// `∫|∇u|^p / ∫|∇_sym u|^p` over compactly supported fields.
    First,
    /// `(∫|u|^p + ∫|∇u|^p) / (∫|u|^p + ∫|∇_sym u|^p)` with a free boundary.
    Second,
    /// `∫|u|^p / ∫|∇_sym u|^p`, compact support; the constant is the
    /// `1/p`-th power.
    PkPlain,
    /// `∫|u|^p / ∫|x − x₀|^p |∇_sym u|^p`, compact support; `1/p`-th power.
    PkWeighted,
}

impl KornMode {
    pub fn boundary_condition(self) -> BoundaryCondition {
        match self {
            KornMode::Second => BoundaryCondition::Free,
            _ => BoundaryCondition::ZeroBoundary,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KornMode::First => "first",
            KornMode::Second => "second",
            KornMode::PkPlain => "pk-plain",
            KornMode::PkWeighted => "pk-weighted",
        }
    }

    fn is_pk(self) -> bool {
        matches!(self, KornMode::PkPlain | KornMode::PkWeighted)
    }
}

impl std::str::FromStr for KornMode {
    type Err = KornError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(KornMode::First),
            "second" => Ok(KornMode::Second),
            "pk-plain" | "pk" => Ok(KornMode::PkPlain),
            "pk-weighted" => Ok(KornMode::PkWeighted),
            other => Err(KornError::Parse(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for KornMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundDirection {
    /// Value of a trial field: the grid constant is at least this large.
    LowerBound,
    /// Extremal generalized eigenvalue: the grid constant itself.
    SharpEigen,
}

#[derive(Debug, Clone)]
pub struct KornEstimate {
    pub value: f64,
    pub p: f64,
    pub mode: KornMode,
    pub bound_direction: BoundDirection,
    pub family: StencilFamily,
    pub grid: GridSpec,
    /// Eigen residual for sharp values; last relative gradient norm of the
    /// ascent for lower bounds.
    pub residual: f64,
    pub seed: u64,
    pub iterations: usize,
    pub maximizer: VectorField,
}

/// Flat JSON record of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimateRecord {
    pub shape: String,
    pub p: f64,
    pub mode: KornMode,
    pub h: f64,
    pub value: f64,
    pub bound_direction: BoundDirection,
    pub residual: f64,
    pub seed: u64,
}

impl KornEstimate {
    pub fn record(&self, shape: &str) -> EstimateRecord {
        EstimateRecord {
            shape: shape.to_string(),
            p: self.p,
            mode: self.mode,
            h: self.grid.spacing(),
            value: self.value,
            bound_direction: self.bound_direction,
            residual: self.residual,
            seed: self.seed,
        }
    }
}

fn eig_opts(tol: f64, seed: u64) -> EigenOptions {
    EigenOptions {
        tol,
        seed,
        ..EigenOptions::default()
    }
}

fn sharp(
    mask: &Arc<DomainMask>,
    mode: KornMode,
    fam: StencilFamily,
    value: f64,
    r: crate::linsolve::EigenResult,
    seed: u64,
) -> KornEstimate {
    let dofs = DofMap::new(mask.clone(), mode.boundary_condition());
    KornEstimate {
        value,
        p: 2.0,
        mode,
        bound_direction: BoundDirection::SharpEigen,
        family: fam,
        grid: mask.grid().clone(),
        residual: r.residual,
        seed,
        iterations: r.iterations,
        maximizer: dofs.to_field(&r.eigenvector),
    }
}

/// Largest `λ` of `GᵀG x = λ SᵀS x` over compactly supported fields.
pub fn korn_first_p2(
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    tol: f64,
    seed: u64,
) -> Result<KornEstimate> {
    korn_first_p2_with(mask, fam, &eig_opts(tol, seed))
}

/// [`korn_first_p2`] with full eigensolver options.
pub fn korn_first_p2_with(
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    opts: &EigenOptions,
) -> Result<KornEstimate> {
    let bc = BoundaryCondition::ZeroBoundary;
    let a = assemble(OperatorKind::Grad, mask, fam, bc)?;
    let b = assemble(OperatorKind::SymGrad, mask, fam, bc)?;
    let r = gen_eig_max_with(&a, &b, opts)?;
    Ok(sharp(mask, KornMode::First, fam, r.eigenvalue, r, opts.seed))
}

/// Largest `λ` of `(M + GᵀG) x = λ (M + SᵀS) x` over all inside nodes with
/// one-sided boundary stencils.
pub fn korn_second_p2(
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    tol: f64,
    seed: u64,
) -> Result<KornEstimate> {
    korn_second_p2_with(mask, fam, &eig_opts(tol, seed))
}

pub fn korn_second_p2_with(
    mask: &Arc<DomainMask>,
    fam: StencilFamily,
    opts: &EigenOptions,
) -> Result<KornEstimate> {
    let bc = BoundaryCondition::Free;
    let m = assemble(OperatorKind::Mass, mask, fam, bc)?;
    let a = assemble(OperatorKind::Grad, mask, fam, bc)?.combine(1.0, &m, 1.0)?;
    let b = assemble(OperatorKind::SymGrad, mask, fam, bc)?.combine(1.0, &m, 1.0)?;
    let r = gen_eig_max_with(&a, &b, opts)?;
    Ok(sharp(mask, KornMode::Second, fam, r.eigenvalue, r, opts.seed))
}

/// Weight origin of the weighted Poincaré-Korn quotient.
#[derive(Debug, Clone, PartialEq)]
pub enum PkWeight {
    None,
    /// `|x − x₀|^p` with the given `x₀`.
    Distance(Vec<f64>),
}

impl PkWeight {
    /// `|x|^p`, measured from the coordinate origin.
    pub fn origin(dim: usize) -> Self {
        PkWeight::Distance(vec![0.0; dim])
    }
}

/// Best constant `C` in `∫|u|^p ≤ C^p ∫ w |∇_sym u|^p` over compactly
/// supported fields, `w = 1` or `|x|^p` from the coordinate origin.
pub fn poincare_korn_best(
    mask: &Arc<DomainMask>,
    p: f64,
    weighted: bool,
    fam: StencilFamily,
    tol: f64,
    seed: u64,
) -> Result<KornEstimate> {
    let weight = if weighted {
        PkWeight::origin(mask.dim())
    } else {
        PkWeight::None
    };
    poincare_korn_best_with(mask, p, &weight, fam, tol, seed)
}

pub fn poincare_korn_best_with(
    mask: &Arc<DomainMask>,
    p: f64,
    weight: &PkWeight,
    fam: StencilFamily,
    tol: f64,
    seed: u64,
) -> Result<KornEstimate> {
    let mode = match weight {
        PkWeight::None => KornMode::PkPlain,
        PkWeight::Distance(x0) => {
            if x0.len() != mask.dim() {
                return Err(KornError::Dimension("weight origin dimension".into()));
            }
            KornMode::PkWeighted
        }
    };
    if p != 2.0 {
        let opts = QuotientOptions {
            seed,
            ..QuotientOptions::default()
        };
        return korn_general_p_weighted(mask, p, mode, weight, fam, &opts);
    }
    let bc = BoundaryCondition::ZeroBoundary;
    let w = node_weight(mask, weight, 2.0);
    let a = assemble_weighted(OperatorKind::SymGrad, mask, fam, bc, w.as_deref())?;
    let m = assemble(OperatorKind::Mass, mask, fam, bc)?;
    let r = gen_eig_min_with(&a, &m, &eig_opts(tol, seed))?;
    let value = r.eigenvalue.powf(-0.5);
    Ok(sharp(mask, mode, fam, value, r, seed))
}

fn node_weight(mask: &Arc<DomainMask>, weight: &PkWeight, p: f64) -> Option<Vec<f64>> {
    match weight {
        PkWeight::None => None,
        PkWeight::Distance(x0) => {
            Some(ScalarField::distance_power(mask.clone(), x0, p).values().to_vec())
        }
    }
}

/// Options of the quotient ascent in [`korn_general_p`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientOptions {
    /// Smoothing `ε` relative to `‖u‖∞` at the first continuation level.
    pub eps_smooth: f64,
    /// Continuation levels; `ε` halves between levels.
    pub levels: usize,
    pub restarts: usize,
    /// Ascent iterations per level.
    pub max_iter: usize,
    pub seed: u64,
    /// Stop a level when the relative gain over ten iterations drops below this.
    pub stall_tol: f64,
}

impl Default for QuotientOptions {
    fn default() -> Self {
        Self {
            eps_smooth: 1e-6,
            levels: 4,
            restarts: 8,
            max_iter: 300,
            seed: 0,
            stall_tol: 1e-10,
        }
    }
}

/// Lower bound for the grid constant of `mode` at exponent `p` by
/// multi-start quotient ascent. The weighted mode uses `|x|^p` from the
/// coordinate origin.
pub fn korn_general_p(
    mask: &Arc<DomainMask>,
    p: f64,
    mode: KornMode,
    fam: StencilFamily,
    opts: &QuotientOptions,
) -> Result<KornEstimate> {
    let weight = if mode == KornMode::PkWeighted {
        PkWeight::origin(mask.dim())
    } else {
        PkWeight::None
    };
    korn_general_p_weighted(mask, p, mode, &weight, fam, opts)
}

pub fn korn_general_p_weighted(
    mask: &Arc<DomainMask>,
    p: f64,
    mode: KornMode,
    weight: &PkWeight,
    fam: StencilFamily,
    opts: &QuotientOptions,
) -> Result<KornEstimate> {
    let lower = if mode.is_pk() { 1.0 } else { 1.0 + 1e-12 };
    if !(p >= lower && p.is_finite()) || (!mode.is_pk() && p <= 1.0) {
        return Err(KornError::Parameter(format!("p must exceed 1, got {p}")));
    }
    if opts.restarts == 0 || opts.levels == 0 || !(opts.eps_smooth > 0.0) {
        return Err(KornError::Parameter("invalid ascent options".into()));
    }
    let q = Quotient::new(mask, p, mode, weight, fam)?;
    let runs: Vec<Result<Ascent>> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| q.ascend(opts, opts.seed.wrapping_add(k as u64)))
        .collect();
    let mut best: Option<Ascent> = None;
    for run in runs {
        let run = run?;
        // Strict comparison keeps the lowest seed among ties.
        if best.as_ref().map_or(true, |b| run.value > b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let maximizer = q.dofs.to_field(&best.x);
    if !best.moved_any {
        return Err(KornError::OptimizationStall {
            best_value: q.constant(best.value),
            best: Box::new(maximizer),
        });
    }
    Ok(KornEstimate {
        value: q.constant(best.value),
        p,
        mode,
        bound_direction: BoundDirection::LowerBound,
        family: fam,
        grid: mask.grid().clone(),
        residual: best.grad_norm,
        seed: best.seed,
        iterations: best.iterations,
        maximizer,
    })
}

/// Exact (unsmoothed) quotient of `mode` at a field. The returned number is
/// the constant reported by [`korn_general_p`]: the quotient itself for
/// Korn modes and its `1/p`-th power for Poincaré-Korn modes.
pub fn quotient_value(
    u: &VectorField,
    p: f64,
    mode: KornMode,
    weight: &PkWeight,
    fam: StencilFamily,
) -> Result<f64> {
    let q = Quotient::new(u.mask(), p, mode, weight, fam)?;
    let x = q.dofs.from_field(u);
    let (num, den) = q.parts(&x, 0.0);
    if den == 0.0 {
        return Err(KornError::Contract("quotient denominator vanishes".into()));
    }
    Ok(q.constant(num / den))
}

/// Sum `Σ_nodes w (|v|² + ε²)^{p/2}` of a node-blocked vector and its
/// gradient with respect to the blocked entries.
struct Term {
    map: SparseOperator,
    block: usize,
    weight: Vec<f64>,
}

impl Term {
    fn value(&self, x: &[f64], p: f64, eps: f64) -> f64 {
        let v = self.map.apply(x);
        self.weight
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(node, w)| {
                let s: f64 = v[node * self.block..(node + 1) * self.block]
                    .iter()
                    .map(|a| a * a)
                    .sum();
                w * pow_smooth(s, eps, p)
            })
            .sum()
    }

    fn value_and_grad(&self, x: &[f64], p: f64, eps: f64) -> (f64, Vec<f64>) {
        let v = self.map.apply(x);
        let mut dv = vec![0.0; v.len()];
        let mut total = 0.0;
        for (node, &w) in self.weight.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let blk = &v[node * self.block..(node + 1) * self.block];
            let s: f64 = blk.iter().map(|a| a * a).sum();
            total += w * pow_smooth(s, eps, p);
            let t = s + eps * eps;
            if t > 0.0 {
                let c = w * p * t.powf(0.5 * p - 1.0);
                for (d, a) in dv[node * self.block..(node + 1) * self.block]
                    .iter_mut()
                    .zip(blk)
                {
                    *d = c * a;
                }
            }
        }
        let mut g = vec![0.0; x.len()];
        // gᵀ = dvᵀ D, computed row by row.
        for r in 0..self.map.rows() {
            if dv[r] != 0.0 {
                for (c, m) in self.map.row(r) {
                    g[c] += dv[r] * m;
                }
            }
        }
        (total, g)
    }
}

fn pow_smooth(s: f64, eps: f64, p: f64) -> f64 {
    let t = s + eps * eps;
    if t == 0.0 {
        0.0
    } else {
        t.powf(0.5 * p)
    }
}

struct Quotient {
    dofs: DofMap,
    p: f64,
    mode: KornMode,
    numerator: Vec<Term>,
    denominator: Vec<Term>,
    /// `p = 2` Gram matrix of the denominator, used as preconditioner.
    precond: SparseOperator,
}

impl Quotient {
    fn new(
        mask: &Arc<DomainMask>,
        p: f64,
        mode: KornMode,
        weight: &PkWeight,
        fam: StencilFamily,
    ) -> Result<Self> {
        let bc = mode.boundary_condition();
        let dofs = DofMap::new(mask.clone(), bc);
        let n = mask.dim();
        let h = mask.spacing();
        // Differences are taken on a unit-spacing copy of the mask and the
        // powers of h folded into the value terms: with Σ h^N |u|^p and
        // Σ h^N |D_h u|^p = h^(N-p) Σ |D_1 u|^p, the quotient equals the one
        // with weights h^p on value terms and 1 on difference terms. A
        // dilated mask then gives bit-identical iterates.
        let inside: Vec<bool> = (0..mask.node_count()).map(|i| mask.is_inside(i)).collect();
        let origin = mask.grid().origin().iter().map(|o| o / h).collect();
        let unit_grid = GridSpec::new(1.0, origin, mask.grid().extent().to_vec())?;
        let unit = Arc::new(DomainMask::from_inside(unit_grid, &inside)?);
        let unit_dofs = DofMap::new(unit.clone(), bc);
        let ones: Vec<f64> = inside.iter().map(|&i| if i { 1.0 } else { 0.0 }).collect();
        let mass_weight: Vec<f64> = ones.iter().map(|w| w * h.powf(p)).collect();
        let term = |op: OperatorKind, weight: Vec<f64>| -> Result<Term> {
            Ok(Term {
                map: operator_map(op, &unit_dofs, fam)?,
                block: if op == OperatorKind::Mass { n } else { n * n },
                weight,
            })
        };
        let sym_weight = match (mode, weight) {
            (KornMode::PkWeighted, PkWeight::Distance(x0)) => {
                let w = ScalarField::distance_power(mask.clone(), x0, p);
                ones.iter().zip(w.values()).map(|(a, b)| a * b).collect()
            }
            (KornMode::PkWeighted, PkWeight::None) => {
                return Err(KornError::Parameter("weighted mode needs a weight".into()))
            }
            _ => ones.clone(),
        };
        let (numerator, denominator) = match mode {
            KornMode::First => (
                vec![term(OperatorKind::Grad, ones.clone())?],
                vec![term(OperatorKind::SymGrad, ones.clone())?],
            ),
            KornMode::Second => (
                vec![
                    term(OperatorKind::Mass, mass_weight.clone())?,
                    term(OperatorKind::Grad, ones.clone())?,
                ],
                vec![
                    term(OperatorKind::Mass, mass_weight.clone())?,
                    term(OperatorKind::SymGrad, ones.clone())?,
                ],
            ),
            KornMode::PkPlain | KornMode::PkWeighted => (
                vec![term(OperatorKind::Mass, mass_weight.clone())?],
                vec![term(OperatorKind::SymGrad, sym_weight)?],
            ),
        };
        let mut precond = assemble(OperatorKind::SymGrad, &unit, fam, bc)?;
        if mode == KornMode::Second {
            let m = assemble(OperatorKind::Mass, &unit, fam, bc)?;
            precond = precond.combine(1.0, &m, h * h)?;
        }
        Ok(Self {
            dofs,
            p,
            mode,
            numerator,
            denominator,
            precond,
        })
    }

    fn constant(&self, quotient: f64) -> f64 {
        if self.mode.is_pk() {
            quotient.powf(1.0 / self.p)
        } else {
            quotient
        }
    }

    fn parts(&self, x: &[f64], eps: f64) -> (f64, f64) {
        let num = self.numerator.iter().map(|t| t.value(x, self.p, eps)).sum();
        let den = self.denominator.iter().map(|t| t.value(x, self.p, eps)).sum();
        (num, den)
    }

    /// `log N − log D` and its gradient.
    fn objective(&self, x: &[f64], eps: f64) -> Option<(f64, Vec<f64>)> {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut gn = vec![0.0; x.len()];
        let mut gd = vec![0.0; x.len()];
        for t in &self.numerator {
            let (v, g) = t.value_and_grad(x, self.p, eps);
            num += v;
            gn.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        for t in &self.denominator {
            let (v, g) = t.value_and_grad(x, self.p, eps);
            den += v;
            gd.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        if !(num > 0.0 && den > 0.0) {
            return None;
        }
        let g = gn.iter().zip(&gd).map(|(a, b)| a / num - b / den).collect();
        Some((num.ln() - den.ln(), g))
    }

    fn log_value(&self, x: &[f64], eps: f64) -> Option<f64> {
        let (num, den) = self.parts(x, eps);
        (num > 0.0 && den > 0.0).then(|| num.ln() - den.ln())
    }

    fn ascend(&self, opts: &QuotientOptions, seed: u64) -> Result<Ascent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..self.dofs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize_sup(&mut x);
        let cg = CgOptions {
            tol: 1e-8,
            max_iter: None,
            jacobi: true,
        };
        let mut moved_any = false;
        let mut iterations = 0;
        let mut grad_norm = f64::INFINITY;
        let mut eps = opts.eps_smooth;
        for _ in 0..opts.levels {
            let Some((mut f, mut g)) = self.objective(&x, eps) else {
                break;
            };
            let mut z = cg_solve_with(&self.precond, &g, None, &cg)?.x;
            let mut d = z.clone();
            let mut gz = dot(&g, &z);
            let mut step = 1.0;
            let mut history = vec![f];
            for _ in 0..opts.max_iter {
                if !(gz > 0.0) {
                    break;
                }
                let mut slope = dot(&g, &d);
                if !(slope > 0.0) {
                    d.copy_from_slice(&z);
                    slope = gz;
                }
                // Armijo backtracking on the smoothed objective.
                let mut t = step;
                let mut accepted = None;
                for _ in 0..40 {
                    let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                    if let Some(ft) = self.log_value(&trial, eps) {
                        if ft >= f + 1e-4 * t * slope {
                            accepted = Some((trial, ft));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                let Some((trial, _)) = accepted else {
                    break;
                };
                moved_any = true;
                iterations += 1;
                step = (2.0 * t).min(1e6);
                x = trial;
                let scale = normalize_sup(&mut x);
                step *= scale;
                let Some((f_new, g_new)) = self.objective(&x, eps) else {
                    break;
                };
                let z_new = cg_solve_with(&self.precond, &g_new, None, &cg)?.x;
                let gz_new = dot(&g_new, &z_new);
                // Polak–Ribière with restart at zero.
                let beta = ((gz_new - dot(&g_new, &z)) / gz).max(0.0);
                d.iter_mut()
                    .zip(&z_new)
                    .for_each(|(d, z)| *d = z + beta * scale * *d);
                f = f_new;
                g = g_new;
                z = z_new;
                gz = gz_new;
                grad_norm = gz.max(0.0).sqrt();
                history.push(f);
                let k = history.len();
                if k > 10 && (history[k - 1] - history[k - 11]).abs() <= opts.stall_tol {
                    break;
                }
            }
            eps *= 0.5;
        }
        let (num, den) = self.parts(&x, 0.0);
        let value = if den > 0.0 { num / den } else { 0.0 };
        Ok(Ascent {
            x,
            value,
            seed,
            iterations,
            grad_norm,
            moved_any,
        })
    }
}

/// Rescales to unit sup norm; returns the factor applied.
fn normalize_sup(x: &mut [f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v /= m);
        1.0 / m
    } else {
        1.0
    }
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
    seed: u64,
    iterations: usize,
    grad_norm: f64,
    moved_any: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffops::{grad, sym_grad};
    use crate::field::lp_power;
    use crate::geometry::{rasterize_fitted, ShapeDescriptor};
    use nalgebra::SymmetricEigen;

    fn square(h: f64) -> Arc<DomainMask> {
        Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, h).unwrap())
    }

    #[test]
    fn explicit_constant_values() {
        let c = paper_constants(2.0, 3, 1.0).unwrap();
        assert!((c.c_pn - (2.0 + 3f64.sqrt()) * 0.4).abs() < 1e-15);
        assert!((c.c_pn - 1.492820).abs() < 1e-6);
        let c = paper_constants(2.0, 2, 2f64.sqrt()).unwrap();
        assert!((c.kappa_omega - 2.414214).abs() < 1e-6);
        assert!((c.kappa_boundary - 2.121320).abs() < 1e-6);
        assert_eq!(paper_constants(1.0, 1, 1.0).unwrap().c_pn, 2.0);
    }

    #[test]
    fn paper_constants_reject_bad_input() {
        assert!(paper_constants(0.5, 2, 1.0).is_err());
        assert!(paper_constants(2.0, 4, 1.0).is_err());
        assert!(paper_constants(2.0, 2, 0.0).is_err());
        assert!(paper_constants(f64::NAN, 2, 1.0).is_err());
    }

    #[test]
    fn kappas_grow_with_diameter() {
        let mut last = paper_constants(1.5, 2, 0.1).unwrap();
        for k in 2..20 {
            let c = paper_constants(1.5, 2, 0.1 * k as f64).unwrap();
            assert!(c.kappa_omega > last.kappa_omega && c.kappa_boundary > last.kappa_boundary);
            last = c;
        }
    }

    #[test]
    fn first_korn_on_small_square_is_two() {
        // Discrete divergence-free fields exist for the forward gradient, so
        // the discrete identity pins the maximum at 2.
        let est = korn_first_p2(&square(1.0 / 8.0), StencilFamily::DualPair, 1e-10, 0).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{}", est.value);
        assert_eq!(est.bound_direction, BoundDirection::SharpEigen);
    }

    #[test]
    fn first_korn_matches_dense_eigen() {
        let mask = square(1.0 / 6.0);
        let bc = BoundaryCondition::ZeroBoundary;
        for fam in [StencilFamily::DualPair, StencilFamily::Backward] {
            let a = assemble(OperatorKind::Grad, &mask, fam, bc).unwrap().to_dense();
            let b = assemble(OperatorKind::SymGrad, &mask, fam, bc).unwrap().to_dense();
            let l = b.clone().cholesky().unwrap().l().try_inverse().unwrap();
            let c = &l * a * l.transpose();
            let top = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.max();
            let est = korn_first_p2(&mask, fam, 1e-10, 1).unwrap();
            assert!((est.value - top).abs() < 1e-8);
        }
    }

    #[test]
    fn second_korn_exceeds_first() {
        let mask = square(1.0 / 8.0);
        let first = korn_first_p2(&mask, StencilFamily::DualPair, 1e-9, 0).unwrap();
        let second = korn_second_p2(&mask, StencilFamily::DualPair, 1e-9, 0).unwrap();
        assert!(second.value > first.value);
        // Lower bound at the rotation W = rot90: ∇_sym u = 0 and |∇u|² = 2.
        let w = VectorField::from_fn(mask.clone(), false, |x, out| {
            out[0] = -(x[1] - 0.5);
            out[1] = x[0] - 0.5;
        });
        let u2 = lp_power(&w, 2.0, None).unwrap();
        let g2 = lp_power(&grad(&w, StencilFamily::DualPair), 2.0, None).unwrap();
        assert!((g2 - 2.0 * mask.inside_count() as f64 * mask.grid().cell_volume()).abs() < 1e-12);
        assert!(second.value >= (u2 + g2) / u2 - 1e-9);
    }

    #[test]
    fn second_korn_depends_on_scale() {
        let shape = ShapeDescriptor::unit_square();
        let a = Arc::new(rasterize_fitted(&shape, 2, 0.125).unwrap());
        let b = Arc::new(rasterize_fitted(&shape.clone().scaled(2.0, vec![0.0, 0.0]), 2, 0.25).unwrap());
        let ka = korn_second_p2(&a, StencilFamily::DualPair, 1e-9, 0).unwrap();
        let kb = korn_second_p2(&b, StencilFamily::DualPair, 1e-9, 0).unwrap();
        assert!((ka.value - kb.value).abs() > 1e-3);
    }

    #[test]
    fn first_korn_is_dilation_invariant() {
        let ball = ShapeDescriptor::ball(vec![0.0, 0.0], 1.0);
        let a = Arc::new(rasterize_fitted(&ball, 2, 0.125).unwrap());
        let b = Arc::new(rasterize_fitted(&ball.clone().scaled(2.0, vec![0.0, 0.0]), 2, 0.25).unwrap());
        assert_eq!(a.labels(), b.labels());
        let fam = StencilFamily::Backward;
        let ka = korn_first_p2(&a, fam, 1e-10, 3).unwrap();
        let kb = korn_first_p2(&b, fam, 1e-10, 3).unwrap();
        assert!((ka.value - kb.value).abs() <= 1e-10);
    }

    #[test]
    fn one_dimensional_pk_is_the_poincare_constant() {
        let mask = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_box(1), 1, 1.0 / 32.0).unwrap());
        let est = poincare_korn_best(&mask, 2.0, false, StencilFamily::DualPair, 1e-10, 0).unwrap();
        // Dense oracle: the forward-difference Dirichlet Laplacian on 31
        // interior nodes, eigenvalues (4/h²) sin²(kπh/2).
        let h = 1.0 / 32.0;
        let n = 31;
        let mut lap = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            lap[(i, i)] = 2.0 / (h * h);
            if i + 1 < n {
                lap[(i, i + 1)] = -1.0 / (h * h);
                lap[(i + 1, i)] = -1.0 / (h * h);
            }
        }
        let mu = SymmetricEigen::new(lap).eigenvalues.min();
        assert!((est.value - mu.powf(-0.5)).abs() < 1e-8);
        let exact = 1.0 / (2.0 / h * (std::f64::consts::PI * h / 2.0).sin());
        assert!((est.value - exact).abs() < 1e-8);
    }

    #[test]
    fn pk_best_respects_explicit_bound() {
        let mask = square(1.0 / 16.0);
        let est = poincare_korn_best(&mask, 2.0, false, StencilFamily::DualPair, 1e-9, 0).unwrap();
        let bound = paper_constants(2.0, 2, mask.diameter()).unwrap().kappa_omega;
        assert!(est.value <= bound);
        assert!(est.residual <= 1e-9);
        let w = poincare_korn_best(&mask, 2.0, true, StencilFamily::DualPair, 1e-9, 0).unwrap();
        assert!(w.value <= paper_constants(2.0, 2, 1.0).unwrap().c_pn);
    }

    #[test]
    fn optimizer_agrees_with_eigensolver_at_p2() {
        let mask = square(1.0 / 10.0);
        let opts = QuotientOptions {
            restarts: 2,
            ..QuotientOptions::default()
        };
        for mode in [KornMode::First, KornMode::Second] {
            let eig = match mode {
                KornMode::First => korn_first_p2(&mask, StencilFamily::DualPair, 1e-9, 0),
                _ => korn_second_p2(&mask, StencilFamily::DualPair, 1e-9, 0),
            }
            .unwrap();
            let opt = korn_general_p(&mask, 2.0, mode, StencilFamily::DualPair, &opts).unwrap();
            assert!(opt.value <= eig.value * (1.0 + 1e-8));
            assert!((opt.value - eig.value).abs() <= 0.01 * eig.value, "{mode}: {} vs {}", opt.value, eig.value);
            assert_eq!(opt.bound_direction, BoundDirection::LowerBound);
        }
    }

    #[test]
    fn stored_maximizer_reproduces_value() {
        let mask = square(1.0 / 8.0);
        let opts = QuotientOptions {
            restarts: 2,
            max_iter: 50,
            ..QuotientOptions::default()
        };
        for (mode, p) in [(KornMode::First, 1.5), (KornMode::PkPlain, 3.0), (KornMode::PkWeighted, 1.2)] {
            let est = korn_general_p(&mask, p, mode, StencilFamily::DualPair, &opts).unwrap();
            let weight = if mode == KornMode::PkWeighted {
                PkWeight::origin(2)
            } else {
                PkWeight::None
            };
            let again = quotient_value(&est.maximizer, p, mode, &weight, StencilFamily::DualPair).unwrap();
            assert!((again - est.value).abs() <= 1e-12 * est.value);
            if mode == KornMode::First {
                let u = &est.maximizer;
                let direct = lp_power(&grad(u, StencilFamily::DualPair), p, None).unwrap()
                    / lp_power(&sym_grad(u, StencilFamily::DualPair), p, None).unwrap();
                assert!((direct - est.value).abs() <= 1e-12 * direct);
                assert!(est.value >= 1.0);
            }
        }
    }

    #[test]
    fn general_p_is_deterministic() {
        let mask = square(1.0 / 8.0);
        let opts = QuotientOptions {
            restarts: 3,
            max_iter: 30,
            seed: 11,
            ..QuotientOptions::default()
        };
        let a = korn_general_p(&mask, 1.5, KornMode::First, StencilFamily::DualPair, &opts).unwrap();
        let b = korn_general_p(&mask, 1.5, KornMode::First, StencilFamily::DualPair, &opts).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.seed, b.seed);
    }

    #[test]
    fn general_p_rejects_p_at_most_one_for_korn() {
        let mask = square(0.25);
        let opts = QuotientOptions::default();
        assert!(korn_general_p(&mask, 1.0, KornMode::First, StencilFamily::DualPair, &opts).is_err());
        assert!(korn_general_p(&mask, 0.5, KornMode::PkPlain, StencilFamily::DualPair, &opts).is_err());
    }

    #[test]
    fn estimate_record_json() {
        let est = korn_first_p2(&square(0.25), StencilFamily::DualPair, 1e-9, 0).unwrap();
        let v = serde_json::to_value(est.record("square")).unwrap();
        assert_eq!(v["boundDirection"], "sharp-eigen");
        assert_eq!(v["mode"], "first");
        assert_eq!(v["h"], 0.25);
    }
}
