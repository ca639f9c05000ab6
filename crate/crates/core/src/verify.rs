//! Checks of the Poincaré-Korn inequalities, the divergence-trace bound and
//! the integrated key relation behind the Poincaré-Korn proof, run field by
//! field or over a seeded corpus.
//!
//! All integrals use the node-sum quadrature of [`crate::field::lp_power`]
//! and the dual-pair gradient unless a family is given explicitly.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::paper_constants;
use crate::diffops::{div_vec, grad, StencilFamily};
use crate::error::{KornError, Result};
use crate::field::{generate, lp_power, GeneratorSpec, GridFunction, ScalarField, VectorField};
use crate::geometry::{rasterize_fitted, DomainMask, ShapeDescriptor};

/// Stencil family used by the checks unless stated otherwise.
pub const DEFAULT_FAMILY: StencilFamily = StencilFamily::DualPair;

/// Absolute floor of the divergence-trace check, relative to `max(1, rhs)`.
pub const DIV_TRACE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantSource {
    PaperFormula,
    ComputedEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantUsed {
    pub source: ConstantSource,
    pub value: f64,
}

/// Outcome of one inequality check `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationReport {
    pub check_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    pub seed: Option<u64>,
    pub h: f64,
    pub p: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub slack: f64,
    pub constant_used: Option<ConstantUsed>,
    pub pass: bool,
    /// False for checks run outside their acceptance domain (boundary check
    /// on a non-box mask): reported, never counted as failures.
    pub acceptance: bool,
}

impl VerificationReport {
    fn new(check: &str, mask: &DomainMask, p: f64, lhs: f64, rhs: f64, slack: f64) -> Self {
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        Self {
            check_name: check.to_string(),
            shape: None,
            generator: None,
            seed: None,
            h: mask.spacing(),
            p,
            lhs,
            rhs,
            ratio,
            slack,
            constant_used: None,
            pass: ratio <= 1.0 + slack,
            acceptance: true,
        }
    }

    fn with_constant(mut self, value: f64) -> Self {
        self.constant_used = Some(ConstantUsed {
            source: ConstantSource::PaperFormula,
            value,
        });
        self
    }

    /// True unless this is an acceptance-tagged failure.
    pub fn ok(&self) -> bool {
        self.pass || !self.acceptance
    }
}

fn require_compact(u: &VectorField) -> Result<()> {
    if u.is_compact() {
        Ok(())
    } else {
        Err(KornError::Contract(
            "check needs a compactly supported field".into(),
        ))
    }
}

/// `∫|u|^p ≤ C_{p,N}^p ∫|x|^p |∇_sym u|^p` with `x` from the coordinate origin.
pub fn check_pk_weighted(u: &VectorField, p: f64) -> Result<VerificationReport> {
    check_pk_weighted_at(u, p, &vec![0.0; u.dim()], DEFAULT_FAMILY)
}

/// Weighted check with the weight centred at `x0`.
pub fn check_pk_weighted_at(
    u: &VectorField,
    p: f64,
    x0: &[f64],
    fam: StencilFamily,
) -> Result<VerificationReport> {
    require_compact(u)?;
    if x0.len() != u.dim() {
        return Err(KornError::Dimension("weight origin dimension".into()));
    }
    let mask = u.mask();
    let c = paper_constants(p, mask.dim(), mask.diameter())?.c_pn;
    let w = ScalarField::distance_power(mask.clone(), x0, p);
    let lhs = lp_power(u, p, None)?;
    let rhs = c.powf(p) * lp_power(&grad(u, fam).sym_part(), p, Some(&w))?;
    Ok(VerificationReport::new("pk-weighted", mask, p, lhs, rhs, 0.0).with_constant(c))
}

/// `∫|u|^p ≤ κ_{p,Ω}^p ∫|∇_sym u|^p`, `κ_{p,Ω} = diam·C_{p,N}`.
pub fn check_pk_bounded(u: &VectorField, p: f64) -> Result<VerificationReport> {
    check_pk_bounded_with(u, p, DEFAULT_FAMILY)
}

pub fn check_pk_bounded_with(
    u: &VectorField,
    p: f64,
    fam: StencilFamily,
) -> Result<VerificationReport> {
    require_compact(u)?;
    let mask = u.mask();
    let kappa = paper_constants(p, mask.dim(), mask.diameter())?.kappa_omega;
    let lhs = lp_power(u, p, None)?;
    let rhs = kappa.powf(p) * lp_power(&grad(u, fam).sym_part(), p, None)?;
    Ok(VerificationReport::new("pk-bounded", mask, p, lhs, rhs, 0.0).with_constant(kappa))
}

/// Slack of the boundary check: 2% at `h = 1/64`, proportional to `h`
/// (the staircase surface quadrature is first order).
pub fn boundary_slack(h: f64) -> f64 {
    0.02 * 64.0 * h
}

/// `∫|u|^p ≤ κ_{p,Ω}^p ∫|∇_sym u|^p + κ_{p,∂Ω} ∫_{∂Ω}|u|^p` for fields with
/// a free boundary. On masks that are not grid-aligned boxes the report is
/// marked as outside acceptance.
pub fn check_pk_boundary(u: &VectorField, p: f64) -> Result<VerificationReport> {
    check_pk_boundary_with(u, p, DEFAULT_FAMILY)
}

pub fn check_pk_boundary_with(
    u: &VectorField,
    p: f64,
    fam: StencilFamily,
) -> Result<VerificationReport> {
    let mask = u.mask();
    let pc = paper_constants(p, mask.dim(), mask.diameter())?;
    let measure = mask.boundary_weights();
    let lhs = lp_power(u, p, None)?;
    let surface: f64 = mask
        .boundary_nodes()
        .map(|n| measure.weights[n] * u.pointwise_norm(n).powf(p))
        .sum();
    let rhs = pc.kappa_omega.powf(p) * lp_power(&grad(u, fam).sym_part(), p, None)?
        + pc.kappa_boundary * surface;
    let mut r = VerificationReport::new("pk-boundary", mask, p, lhs, rhs, boundary_slack(mask.spacing()))
        .with_constant(pc.kappa_boundary);
    r.acceptance = measure.axis_aligned_box;
    Ok(r)
}

/// Pointwise `|div u| ≤ √N |∇_sym u|` with a uniform family. The report
/// carries the node with the largest excess.
pub fn check_div_trace_bound(u: &VectorField) -> Result<VerificationReport> {
    check_div_trace_bound_with(u, StencilFamily::Forward)
}

pub fn check_div_trace_bound_with(u: &VectorField, fam: StencilFamily) -> Result<VerificationReport> {
    if !fam.is_uniform() {
        return Err(KornError::Parameter(
            "the trace bound needs div and grad from the same difference".into(),
        ));
    }
    let mask = u.mask();
    let g = grad(u, fam);
    let sym = g.sym_part();
    let div = div_vec(u, fam);
    let root_n = (mask.dim() as f64).sqrt();
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for node in mask.inside_nodes() {
        let lhs = div.value(node).abs();
        let rhs = root_n * sym.pointwise_norm(node);
        let excess = (lhs - rhs) / rhs.max(1.0);
        if excess > worst.0 {
            worst = (excess, lhs, rhs);
        }
    }
    let (excess, lhs, rhs) = worst;
    let mut r = VerificationReport::new("div-trace", mask, 2.0, lhs, rhs, 0.0);
    r.pass = excess <= DIV_TRACE_TOL;
    Ok(r)
}

/// Integrated key relation at one grid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FundrelLevel {
    pub h: f64,
    /// `∫ (N/p + |u|²/|u_ε|²) |u_ε|^p`.
    pub lhs: f64,
    /// Integral of the right-hand side including the divergence terms.
    pub rhs: f64,
    /// Integral of the two pure divergence terms alone (minus the constant
    /// `(N/p) ε^p` part, see [`check_fundrel`]).
    pub divergence_sum: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FundrelRecord {
    pub p: f64,
    pub eps: f64,
    pub family: StencilFamily,
    pub levels: Vec<FundrelLevel>,
    /// Least-squares slope of `log residual` against `log h`.
    pub slope: f64,
    /// True when every residual is below the rounding floor, where the
    /// slope carries no information.
    pub exact: bool,
}

impl FundrelRecord {
    pub fn pass(&self, min_slope: f64) -> bool {
        self.exact || self.slope >= min_slope
    }
}

/// The field used by the refinement study of the key relation: a bump in a
/// fixed direction on `[0.2, 0.8]^N`.
pub fn default_fundrel_field(dim: usize) -> GeneratorSpec {
    let mut amplitude = vec![0.0; dim];
    amplitude[0] = 1.0;
    if dim > 1 {
        amplitude[1] = -0.5;
    }
    GeneratorSpec::Bump {
        lo: vec![0.2; dim],
        hi: vec![0.8; dim],
        amplitude,
    }
}

/// Integrates both sides of the key relation
///
/// `(N/p + |u|²/|u_ε|²)|u_ε|^p = −2|u_ε|^{p−2} u·(∇_sym u x) − (u·x) div(|u_ε|^{p−2}u)
///  + (1/p) div(|u_ε|^p x) + div(|u_ε|^{p−2}(u·x) u)`
///
/// on `shape` at each spacing in `hs` and fits the convergence slope of the
/// residual. `u_ε = (u, ε)`; `eps = None` means `10⁻³ ‖u‖∞`.
///
/// `|u_ε|^p x` does not vanish at the boundary, so its divergence is taken
/// as `div((|u_ε|^p − ε^p) x) + N ε^p`; the remaining divergence arguments
/// vanish off the interior, their zero-extended node sums telescope, and
/// the residual measures the consistency error of the two product terms.
pub fn check_fundrel(
    spec: &GeneratorSpec,
    shape: &ShapeDescriptor,
    dim: usize,
    p: f64,
    eps: Option<f64>,
    hs: &[f64],
    fam: StencilFamily,
) -> Result<FundrelRecord> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(KornError::Parameter(format!("p must be >= 1, got {p}")));
    }
    if let Some(e) = eps {
        if !(e > 0.0) {
            return Err(KornError::Parameter(format!("ε must be positive, got {e}")));
        }
    }
    if hs.len() < 2 {
        return Err(KornError::Parameter("need at least two refinement levels".into()));
    }
    let mut levels = vec![];
    let mut eps_used = f64::NAN;
    for &h in hs {
        let mask = Arc::new(rasterize_fitted(shape, dim, h)?);
        let u = generate(spec, &mask, true)?;
        let e = eps.unwrap_or(1e-3 * u.sup_norm());
        if !(e > 0.0) {
            return Err(KornError::Parameter(
                "default ε is zero for a zero field; pass ε explicitly".into(),
            ));
        }
        eps_used = e;
        levels.push(fundrel_level(&u, p, e, fam)?);
    }
    let scale = levels.iter().fold(0.0f64, |m, l| m.max(l.lhs.abs()));
    let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let exact = levels.iter().all(|l| l.residual <= floor);
    let slope = if exact {
        f64::INFINITY
    } else {
        log_log_slope(
            &levels.iter().map(|l| l.h).collect::<Vec<_>>(),
            &levels.iter().map(|l| l.residual.max(floor)).collect::<Vec<_>>(),
        )
    };
    Ok(FundrelRecord {
        p,
        eps: eps_used,
        family: fam,
        levels,
        slope,
        exact,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn fundrel_level(u: &VectorField, p: f64, eps: f64, fam: StencilFamily) -> Result<FundrelLevel> {
    let mask = u.mask().clone();
    let n = mask.dim();
    let nf = n as f64;
    let grid = mask.grid();
    let hn = grid.cell_volume();
    let sym = grad(u, fam).sym_part();
    let a2 = |node: usize| u.at(node).iter().map(|v| v * v).sum::<f64>() + eps * eps;
    let eps_p = eps.powf(p);
    // Vector fields entering divergences; all vanish off the interior.
    let mut v_pow = vec![0.0; mask.node_count() * n]; // |u_ε|^{p−2} u
    let mut v_x = vec![0.0; mask.node_count() * n]; // (|u_ε|^p − ε^p) x
    let mut v_ux = vec![0.0; mask.node_count() * n]; // |u_ε|^{p−2} (u·x) u
    let mut x = vec![0.0; n];
    for node in mask.inside_nodes() {
        grid.coord_into(node, &mut x);
        let s = a2(node);
        let ap2 = s.powf(0.5 * p - 1.0);
        let ui = u.at(node);
        let ux: f64 = ui.iter().zip(&x).map(|(a, b)| a * b).sum();
        for k in 0..n {
            v_pow[node * n + k] = ap2 * ui[k];
            v_x[node * n + k] = (s.powf(0.5 * p) - eps_p) * x[k];
            v_ux[node * n + k] = ap2 * ux * ui[k];
        }
    }
    let compact = |v: Vec<f64>| VectorField::new(mask.clone(), v, true);
    let div_pow = div_vec(&compact(v_pow)?, fam);
    let div_x = div_vec(&compact(v_x)?, fam);
    let div_ux = div_vec(&compact(v_ux)?, fam);
    let (mut lhs, mut rhs, mut divs) = (0.0, 0.0, 0.0);
    for node in mask.inside_nodes() {
        grid.coord_into(node, &mut x);
        let s = a2(node);
        let ui = u.at(node);
        let u2: f64 = ui.iter().map(|v| v * v).sum();
        let ux: f64 = ui.iter().zip(&x).map(|(a, b)| a * b).sum();
        lhs += (nf / p + u2 / s) * s.powf(0.5 * p);
        // u·(∇_sym u x) with (∇_sym u x)_i = Σ_j S_ij x_j.
        let mut usx = 0.0;
        for i in 0..n {
            let sx: f64 = (0..n).map(|j| sym.entry(node, i, j) * x[j]).sum();
            usx += ui[i] * sx;
        }
        let d = div_x.value(node) / p + div_ux.value(node);
        divs += d;
        rhs += -2.0 * s.powf(0.5 * p - 1.0) * usx - ux * div_pow.value(node) + d + nf / p * eps_p;
    }
    Ok(FundrelLevel {
        h: mask.spacing(),
        lhs: lhs * hn,
        rhs: rhs * hn,
        divergence_sum: divs * hn,
        residual: (lhs - rhs).abs() * hn,
    })
}

/// Checks runnable over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    PkWeighted,
    PkBounded,
    PkBoundary,
    DivTrace,
}

impl CheckKind {
    /// Whether the check runs on compactly supported fields.
    pub fn compact(self) -> bool {
        matches!(self, CheckKind::PkWeighted | CheckKind::PkBounded)
    }

    pub fn run(self, u: &VectorField, p: f64) -> Result<VerificationReport> {
        match self {
            CheckKind::PkWeighted => check_pk_weighted(u, p),
            CheckKind::PkBounded => check_pk_bounded(u, p),
            CheckKind::PkBoundary => check_pk_boundary(u, p),
            CheckKind::DivTrace => check_div_trace_bound(u),
        }
    }
}

/// Named mask for corpus runs.
#[derive(Debug, Clone)]
pub struct CorpusMask {
    pub name: String,
    pub mask: Arc<DomainMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub reports: Vec<VerificationReport>,
    pub pass: bool,
    pub failures: usize,
}

impl CorpusReport {
    /// CLI status: 0 when every acceptance-tagged check passes, else 1.
    pub fn exit_status(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }

    pub fn max_ratio(&self, check: &str) -> f64 {
        self.reports
            .iter()
            .filter(|r| r.check_name == check)
            .map(|r| r.ratio)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs every check on every (mask, field, p) cell in parallel and merges
/// the reports in the nested order mask, field, p, check.
///
/// Compact checks get the field multiplied by the bump of the mask's
/// inscribed box; the others get it as generated.
pub fn run_corpus(
    checks: &[CheckKind],
    corpus: &[GeneratorSpec],
    masks: &[CorpusMask],
    ps: &[f64],
) -> Result<CorpusReport> {
    let cells: Vec<(usize, usize)> = (0..masks.len())
        .flat_map(|m| (0..corpus.len()).map(move |f| (m, f)))
        .collect();
    let blocks: Vec<Result<Vec<VerificationReport>>> = cells
        .par_iter()
        .map(|&(m, f)| {
            let cm = &masks[m];
            let spec = &corpus[f];
            let mut out = vec![];
            let mut compact_field = None;
            let mut free_field = None;
            for &p in ps {
                for &check in checks {
                    let slot = if check.compact() {
                        &mut compact_field
                    } else {
                        &mut free_field
                    };
                    if slot.is_none() {
                        *slot = Some(generate(spec, &cm.mask, check.compact())?);
                    }
                    let mut r = check.run(slot.as_ref().unwrap(), p)?;
                    r.shape = Some(cm.name.clone());
                    r.generator = Some(spec.clone());
                    r.seed = spec.seed();
                    out.push(r);
                }
            }
            Ok(out)
        })
        .collect();
    let mut reports = vec![];
    for b in blocks {
        reports.extend(b?);
    }
    let failures = reports.iter().filter(|r| !r.ok()).count();
    Ok(CorpusReport {
        pass: failures == 0,
        failures,
        reports,
    })
}

/// Writes the failing reports with their regenerated fields as JSON.
pub fn write_dossier(report: &CorpusReport, masks: &[CorpusMask], path: &Path) -> Result<()> {
    let mut entries = vec![];
    for r in report.reports.iter().filter(|r| !r.ok()) {
        let field = match (&r.generator, masks.iter().find(|m| Some(&m.name) == r.shape.as_ref())) {
            (Some(spec), Some(m)) => {
                let compact = r.check_name == "pk-weighted" || r.check_name == "pk-bounded";
                Some(generate(spec, &m.mask, compact)?.to_json())
            }
            _ => None,
        };
        entries.push(serde_json::json!({ "report": r, "field": field }));
    }
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &entries)
        .map_err(|e| KornError::Parse(e.to_string()))?;
    writeln!(file)?;
    Ok(())
}
