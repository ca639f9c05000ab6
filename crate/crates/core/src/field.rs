//! Vector-, matrix- and scalar-valued grid functions on a [`DomainMask`],
//! their p-norms and inner products, and a seeded generator corpus.
//!
//! Values are stored for every grid node (exterior nodes hold zeros), node
//! major and component minor. A matrix entry `(i, j)` of a gradient is
//! `∂_i u_j`: column `j` is the gradient of component `j`.
//!
//! The `compact` flag marks fields whose zero extension beyond the mask is
//! exact: generated fields with compact support (zero on every non-interior
//! node) and anything differentiated from them. Difference operators read
//! ghost values as zero for such fields and fall back to one-sided stencils
//! at the boundary otherwise.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KornError, Result};
use crate::geometry::{csv_err, DomainMask};

/// Grid function with a fixed number of real components per node.
pub trait GridFunction {
    fn mask(&self) -> &Arc<DomainMask>;
    fn components(&self) -> usize;
    fn values(&self) -> &[f64];

    fn at(&self, node: usize) -> &[f64] {
        let c = self.components();
        &self.values()[node * c..(node + 1) * c]
    }

    /// Euclidean (vectors) or Frobenius (matrices) norm at a node.
    fn pointwise_norm(&self, node: usize) -> f64 {
        self.at(node).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
    compact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
    compact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
    compact: bool,
}

macro_rules! grid_function {
    ($ty:ty, $comps:expr) => {
        impl GridFunction for $ty {
            fn mask(&self) -> &Arc<DomainMask> {
                &self.mask
            }
            fn components(&self) -> usize {
                let f: fn(&$ty) -> usize = $comps;
                f(self)
            }
            fn values(&self) -> &[f64] {
                &self.values
            }
        }
    };
}

grid_function!(ScalarField, |_| 1);
grid_function!(VectorField, |f| f.mask.dim());
grid_function!(MatrixField, |f| f.mask.dim() * f.mask.dim());

fn check_values(mask: &DomainMask, values: &[f64], comps: usize) -> Result<()> {
    if values.len() != mask.node_count() * comps {
        return Err(KornError::Dimension(format!(
            "expected {} values, got {}",
            mask.node_count() * comps,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(KornError::Parameter("field values must be finite".into()));
    }
    Ok(())
}

fn zero_exterior(mask: &DomainMask, values: &mut [f64], comps: usize, compact: bool) {
    for node in 0..mask.node_count() {
        let keep = if compact {
            mask.is_interior(node)
        } else {
            mask.is_inside(node)
        };
        if !keep {
            values[node * comps..(node + 1) * comps].fill(0.0);
        }
    }
}

impl ScalarField {
    pub fn new(mask: Arc<DomainMask>, mut values: Vec<f64>) -> Result<Self> {
        check_values(&mask, &values, 1)?;
        zero_exterior(&mask, &mut values, 1, false);
        Ok(Self {
            mask,
            values,
            compact: false,
        })
    }

    pub fn zeros(mask: Arc<DomainMask>) -> Self {
        let values = vec![0.0; mask.node_count()];
        Self {
            mask,
            values,
            compact: false,
        }
    }

    pub fn from_fn(mask: Arc<DomainMask>, f: impl Fn(&[f64]) -> f64) -> Self {
        let grid = mask.grid();
        let values = (0..mask.node_count())
            .map(|n| if mask.is_inside(n) { f(&grid.coord(n)) } else { 0.0 })
            .collect();
        Self {
            mask,
            values,
            compact: false,
        }
    }

    /// `|x - x0|^p` on inside nodes.
    pub fn distance_power(mask: Arc<DomainMask>, x0: &[f64], p: f64) -> Self {
        let x0 = x0.to_vec();
        Self::from_fn(mask, move |x| {
            x.iter()
                .zip(&x0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                .powf(p)
        })
    }

    pub(crate) fn from_raw(mask: Arc<DomainMask>, values: Vec<f64>, compact: bool) -> Self {
        Self {
            mask,
            values,
            compact,
        }
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `Σ f h^N` over inside nodes.
    pub fn integral(&self) -> f64 {
        let w = self.mask.grid().cell_volume();
        self.mask.inside_nodes().map(|n| self.values[n]).sum::<f64>() * w
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl VectorField {
    /// Builds a field from node-major values. Exterior entries (and boundary
    /// entries when `compact`) are forced to zero.
    pub fn new(mask: Arc<DomainMask>, mut values: Vec<f64>, compact: bool) -> Result<Self> {
        let n = mask.dim();
        check_values(&mask, &values, n)?;
        zero_exterior(&mask, &mut values, n, compact);
        Ok(Self {
            mask,
            values,
            compact,
        })
    }

    pub fn zeros(mask: Arc<DomainMask>, compact: bool) -> Self {
        let values = vec![0.0; mask.node_count() * mask.dim()];
        Self {
            mask,
            values,
            compact,
        }
    }

    pub fn from_fn(
        mask: Arc<DomainMask>,
        compact: bool,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> Self {
        let n = mask.dim();
        let mut values = vec![0.0; mask.node_count() * n];
        let mut x = vec![0.0; n];
        for node in mask.inside_nodes() {
            mask.grid().coord_into(node, &mut x);
            f(&x, &mut values[node * n..(node + 1) * n]);
        }
        zero_exterior(&mask, &mut values, n, compact);
        Self {
            mask,
            values,
            compact,
        }
    }

    pub(crate) fn from_raw(mask: Arc<DomainMask>, values: Vec<f64>, compact: bool) -> Self {
        Self {
            mask,
            values,
            compact,
        }
    }

    /// True when the field vanishes on every non-interior node.
    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mask: self.mask.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
            compact: self.compact,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.mask.node_count())
            .map(|n| self.pointwise_norm(n))
            .fold(0.0, f64::max)
    }

    /// Extension by zero onto a mask on the same lattice (same spacing,
    /// node offsets an integer number of cells apart).
    pub fn extend_by_zero(&self, target: Arc<DomainMask>) -> Result<Self> {
        let src = self.mask.grid();
        let dst = target.grid();
        let dim = src.dim();
        if dst.dim() != dim || (dst.spacing() - src.spacing()).abs() > 1e-12 * src.spacing() {
            return Err(KornError::MaskMismatch);
        }
        let mut shift = Vec::with_capacity(dim);
        for axis in 0..dim {
            let t = (src.origin()[axis] - dst.origin()[axis]) / src.spacing();
            if (t - t.round()).abs() > 1e-8 {
                return Err(KornError::MaskMismatch);
            }
            shift.push(t.round() as i64);
        }
        let mut out = VectorField::zeros(target.clone(), self.compact);
        for node in self.mask.inside_nodes() {
            let u = self.at(node);
            if u.iter().all(|v| *v == 0.0) {
                continue;
            }
            let idx = src.multi_index(node);
            let moved: Option<Vec<usize>> = idx
                .iter()
                .zip(&shift)
                .zip(dst.extent())
                .map(|((&i, &s), &n)| {
                    let j = i as i64 + s;
                    (j >= 0 && (j as usize) < n).then_some(j as usize)
                })
                .collect();
            let ok = moved
                .map(|m| dst.linear_index(&m))
                .filter(|&t| {
                    if self.compact {
                        target.is_interior(t)
                    } else {
                        target.is_inside(t)
                    }
                });
            let Some(t) = ok else {
                return Err(KornError::Contract(
                    "support does not fit inside the target mask".into(),
                ));
            };
            out.values[t * dim..(t + 1) * dim].copy_from_slice(u);
        }
        Ok(out)
    }

    /// `x0,..,x{N-1},u0,..,u{N-1}` rows over inside nodes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
        header.extend((0..n).map(|k| format!("u{k}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for node in self.mask.inside_nodes() {
            let row: Vec<String> = self
                .mask
                .grid()
                .coord(node)
                .iter()
                .chain(self.at(node))
                .map(|v| v.to_string())
                .collect();
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let grid = self.mask.grid();
        let nodes: Vec<serde_json::Value> = self
            .mask
            .inside_nodes()
            .map(|n| serde_json::json!({ "x": grid.coord(n), "u": self.at(n) }))
            .collect();
        serde_json::json!({
            "dim": self.dim(),
            "h": grid.spacing(),
            "compact": self.compact,
            "nodes": nodes,
        })
    }
}

impl MatrixField {
    pub fn new(mask: Arc<DomainMask>, mut values: Vec<f64>, compact: bool) -> Result<Self> {
        let c = mask.dim() * mask.dim();
        check_values(&mask, &values, c)?;
        zero_exterior(&mask, &mut values, c, compact);
        Ok(Self {
            mask,
            values,
            compact,
        })
    }

    pub fn zeros(mask: Arc<DomainMask>, compact: bool) -> Self {
        let values = vec![0.0; mask.node_count() * mask.dim() * mask.dim()];
        Self {
            mask,
            values,
            compact,
        }
    }

    /// Same matrix at every inside node.
    pub fn constant(mask: Arc<DomainMask>, m: &[f64]) -> Result<Self> {
        let c = mask.dim() * mask.dim();
        if m.len() != c {
            return Err(KornError::Dimension(format!(
                "constant matrix needs {c} entries"
            )));
        }
        let mut values = vec![0.0; mask.node_count() * c];
        for node in mask.inside_nodes() {
            values[node * c..(node + 1) * c].copy_from_slice(m);
        }
        Ok(Self {
            mask,
            values,
            compact: false,
        })
    }

    pub fn identity(mask: Arc<DomainMask>) -> Self {
        let n = mask.dim();
        let eye: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        Self::constant(mask, &eye).expect("identity has N*N entries")
    }

    pub fn from_fn(
        mask: Arc<DomainMask>,
        compact: bool,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> Self {
        let c = mask.dim() * mask.dim();
        let mut values = vec![0.0; mask.node_count() * c];
        let mut x = vec![0.0; mask.dim()];
        for node in mask.inside_nodes() {
            mask.grid().coord_into(node, &mut x);
            f(&x, &mut values[node * c..(node + 1) * c]);
        }
        zero_exterior(&mask, &mut values, c, compact);
        Self {
            mask,
            values,
            compact,
        }
    }

    pub(crate) fn from_raw(mask: Arc<DomainMask>, values: Vec<f64>, compact: bool) -> Self {
        Self {
            mask,
            values,
            compact,
        }
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    /// Entry `(i, j)` at a node.
    pub fn entry(&self, node: usize, i: usize, j: usize) -> f64 {
        let n = self.dim();
        self.values[node * n * n + i * n + j]
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim();
        let mut values = self.values.clone();
        for node in 0..self.mask.node_count() {
            let base = node * n * n;
            for i in 0..n {
                for j in 0..n {
                    values[base + i * n + j] = self.values[base + j * n + i];
                }
            }
        }
        Self {
            mask: self.mask.clone(),
            values,
            compact: self.compact,
        }
    }

    /// `a * self + b * other`, entrywise.
    pub fn combine(&self, a: f64, other: &MatrixField, b: f64) -> Result<Self> {
        if !Arc::ptr_eq(&self.mask, &other.mask) && self.mask != other.mask {
            return Err(KornError::MaskMismatch);
        }
        Ok(Self {
            mask: self.mask.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            compact: self.compact && other.compact,
        })
    }

    pub fn sym_part(&self) -> Self {
        self.combine(0.5, &self.transpose(), 0.5)
            .expect("transpose shares the mask")
    }

    pub fn skw_part(&self) -> Self {
        self.combine(0.5, &self.transpose(), -0.5)
            .expect("transpose shares the mask")
    }

    /// Trace at every node.
    pub fn trace(&self) -> ScalarField {
        let n = self.dim();
        let values = (0..self.mask.node_count())
            .map(|node| (0..n).map(|i| self.entry(node, i, i)).sum())
            .collect();
        ScalarField::from_raw(self.mask.clone(), values, self.compact)
    }
}

fn same_mask(a: &Arc<DomainMask>, b: &Arc<DomainMask>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(KornError::MaskMismatch)
    }
}

/// `(Σ w |f|^p h^N)^(1/p)` over inside nodes.
pub fn lp_norm<F: GridFunction>(f: &F, p: f64, weight: Option<&ScalarField>) -> Result<f64> {
    Ok(lp_power(f, p, weight)?.powf(1.0 / p))
}

/// `Σ w |f|^p h^N` over inside nodes (the p-th power of [`lp_norm`]).
pub fn lp_power<F: GridFunction>(f: &F, p: f64, weight: Option<&ScalarField>) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(KornError::Parameter(format!(
            "norm exponent must be finite and >= 1, got {p}"
        )));
    }
    let mask = f.mask();
    if let Some(w) = weight {
        same_mask(mask, w.mask())?;
        if mask.inside_nodes().any(|n| w.value(n) < 0.0) {
            return Err(KornError::Parameter("weight must be nonnegative".into()));
        }
    }
    let sum: f64 = mask
        .inside_nodes()
        .map(|n| {
            let w = weight.map_or(1.0, |w| w.value(n));
            w * f.pointwise_norm(n).powf(p)
        })
        .sum();
    Ok(sum * mask.grid().cell_volume())
}

/// Integrated Frobenius inner product `Σ tr(fᵀ g) h^N`.
pub fn inner(f: &MatrixField, g: &MatrixField) -> Result<f64> {
    same_mask(&f.mask, &g.mask)?;
    let c = f.components();
    let sum: f64 = f
        .mask
        .inside_nodes()
        .map(|n| {
            f.values[n * c..(n + 1) * c]
                .iter()
                .zip(&g.values[n * c..(n + 1) * c])
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    Ok(sum * f.mask.grid().cell_volume())
}

/// Integrated Euclidean inner product of two vector fields.
pub fn inner_vec(f: &VectorField, g: &VectorField) -> Result<f64> {
    same_mask(&f.mask, &g.mask)?;
    let c = f.components();
    let sum: f64 = f
        .mask
        .inside_nodes()
        .map(|n| {
            f.values[n * c..(n + 1) * c]
                .iter()
                .zip(&g.values[n * c..(n + 1) * c])
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    Ok(sum * f.mask.grid().cell_volume())
}

/// Recipes for deterministic test fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `amplitude * Π_k (1 - t_k^2)^3` on the box `[lo, hi]`, zero outside.
    Bump {
        lo: Vec<f64>,
        hi: Vec<f64>,
        amplitude: Vec<f64>,
    },
    /// `u_i = a_i sin(k·x + φ_i)` with seeded amplitudes and phases.
    Trig { frequency: Vec<f64>, seed: u64 },
    /// Seeded Fourier sum over wave numbers `1..=modes` per axis with
    /// amplitudes decaying like `|k|^-decay`.
    RandomFourier { modes: usize, decay: f64, seed: u64 },
    /// `u(x) = a + W x` with `W` skew-symmetric (rows of `W`).
    Rigid {
        translation: Vec<f64>,
        rotation: Vec<Vec<f64>>,
    },
    /// Seeded polynomial of total degree `<= degree` in each component.
    Polynomial { degree: u32, seed: u64 },
}

impl GeneratorSpec {
    /// The seed of seeded generators.
    pub fn seed(&self) -> Option<u64> {
        match self {
            GeneratorSpec::Trig { seed, .. }
            | GeneratorSpec::RandomFourier { seed, .. }
            | GeneratorSpec::Polynomial { seed, .. } => Some(*seed),
            GeneratorSpec::Bump { .. } | GeneratorSpec::Rigid { .. } => None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            GeneratorSpec::Bump { lo, hi, amplitude } => {
                if lo.len() != dim || hi.len() != dim || amplitude.len() != dim {
                    return Err(KornError::Dimension("bump spec dimension mismatch".into()));
                }
                if lo.iter().zip(hi).any(|(l, u)| !(u > l)) {
                    return Err(KornError::Parameter("bump box must be nonempty".into()));
                }
                Ok(())
            }
            GeneratorSpec::Trig { frequency, .. } => {
                if frequency.len() != dim {
                    return Err(KornError::Dimension("frequency vector length".into()));
                }
                if frequency.iter().all(|k| *k == 0.0) || frequency.iter().any(|k| !k.is_finite())
                {
                    return Err(KornError::Parameter("frequency must be nonzero".into()));
                }
                Ok(())
            }
            GeneratorSpec::RandomFourier { modes, decay, .. } => {
                if *modes == 0 {
                    return Err(KornError::Parameter("need at least one mode".into()));
                }
                if !(*decay > 1.0) {
                    return Err(KornError::Parameter(format!(
                        "decay rate must exceed 1, got {decay}"
                    )));
                }
                Ok(())
            }
            GeneratorSpec::Rigid {
                translation,
                rotation,
            } => {
                if translation.len() != dim
                    || rotation.len() != dim
                    || rotation.iter().any(|r| r.len() != dim)
                {
                    return Err(KornError::Dimension("rigid motion dimension mismatch".into()));
                }
                let scale = rotation.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
                for i in 0..dim {
                    for j in 0..dim {
                        if (rotation[i][j] + rotation[j][i]).abs() > 1e-12 * scale {
                            return Err(KornError::Parameter(
                                "rigid motion matrix must be skew-symmetric".into(),
                            ));
                        }
                    }
                }
                Ok(())
            }
            GeneratorSpec::Polynomial { degree, .. } => {
                if *degree > 3 {
                    return Err(KornError::Parameter("polynomial degree must be <= 3".into()));
                }
                Ok(())
            }
        }
    }

    /// Field value at `x`; `frame` gives the lower corner and side lengths
    /// used to normalize coordinates for the Fourier variant.
    fn evaluator(&self, dim: usize, frame: (&[f64], &[f64])) -> Box<dyn Fn(&[f64], &mut [f64]) + Sync> {
        match self.clone() {
            GeneratorSpec::Bump { lo, hi, amplitude } => Box::new(move |x, out| {
                let b = bump_profile(x, &lo, &hi);
                for (o, a) in out.iter_mut().zip(&amplitude) {
                    *o = a * b;
                }
            }),
            GeneratorSpec::Trig { frequency, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let coeffs: Vec<(f64, f64)> = (0..dim)
                    .map(|_| {
                        let a: f64 = rng.gen_range(0.5..1.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        (a, phase)
                    })
                    .collect();
                Box::new(move |x, out| {
                    let kx: f64 = frequency.iter().zip(x).map(|(k, c)| k * c).sum();
                    for (o, (a, phase)) in out.iter_mut().zip(&coeffs) {
                        *o = a * (kx + phase).sin();
                    }
                })
            }
            GeneratorSpec::RandomFourier { modes, decay, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lo = frame.0.to_vec();
                let len = frame.1.to_vec();
                let mut terms = Vec::new();
                let count = modes.pow(dim as u32);
                for code in 0..count {
                    let mut rest = code;
                    let k: Vec<f64> = (0..dim)
                        .map(|_| {
                            let v = rest % modes + 1;
                            rest /= modes;
                            v as f64
                        })
                        .collect();
                    let amp = k.iter().map(|v| v * v).sum::<f64>().sqrt().powf(-decay);
                    let cs: Vec<(f64, f64)> = (0..dim)
                        .map(|_| {
                            let a: f64 = rng.sample(StandardNormal);
                            let b: f64 = rng.sample(StandardNormal);
                            (amp * a, amp * b)
                        })
                        .collect();
                    terms.push((k, cs));
                }
                Box::new(move |x, out| {
                    out.fill(0.0);
                    for (k, cs) in &terms {
                        let arg: f64 = k
                            .iter()
                            .zip(x.iter().zip(lo.iter().zip(&len)))
                            .map(|(kk, (c, (l, s)))| kk * std::f64::consts::PI * (c - l) / s)
                            .sum();
                        let (sn, cn) = arg.sin_cos();
                        for (o, (a, b)) in out.iter_mut().zip(cs) {
                            *o += a * cn + b * sn;
                        }
                    }
                })
            }
            GeneratorSpec::Rigid {
                translation,
                rotation,
            } => Box::new(move |x, out| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = translation[i] + rotation[i].iter().zip(x).map(|(w, c)| w * c).sum::<f64>();
                }
            }),
            GeneratorSpec::Polynomial { degree, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let exps = monomials(dim, degree);
                let coeffs: Vec<Vec<f64>> = (0..dim)
                    .map(|_| exps.iter().map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                Box::new(move |x, out| {
                    for (o, cs) in out.iter_mut().zip(&coeffs) {
                        *o = exps
                            .iter()
                            .zip(cs)
                            .map(|(e, c)| {
                                c * e.iter().zip(x).map(|(&p, v)| v.powi(p as i32)).product::<f64>()
                            })
                            .sum();
                    }
                })
            }
        }
    }
}

/// `Π_k (1 - t_k^2)^3` with `t_k` the position relative to the box center
/// in units of the half-width; zero outside the open box.
pub fn bump_profile(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(c, (l, u))| {
            let t = (2.0 * c - l - u) / (u - l);
            if t.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - t * t).powi(3)
            }
        })
        .product()
}

fn monomials(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=degree - used).map(move |p| {
                    let mut e = e.clone();
                    e.push(p);
                    e
                })
            })
            .collect();
    }
    out
}

fn check_support_box(mask: &DomainMask, lo: &[f64], hi: &[f64]) -> Result<()> {
    let grid = mask.grid();
    for node in 0..mask.node_count() {
        let x = grid.coord(node);
        let strictly_inside = x
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(c, (l, u))| c > l && c < u);
        if strictly_inside && !mask.is_interior(node) {
            return Err(KornError::Contract(
                "support box is not inside the mask interior".into(),
            ));
        }
    }
    Ok(())
}

/// Evaluates a generator on the mask.
///
/// With `compact_support`, the field is multiplied by the polynomial bump
/// of a support box (the recipe's own box for [`GeneratorSpec::Bump`], else
/// [`DomainMask::inscribed_box`]) and every non-interior node is zeroed.
pub fn generate(
    spec: &GeneratorSpec,
    mask: &Arc<DomainMask>,
    compact_support: bool,
) -> Result<VectorField> {
    let support = if compact_support {
        match spec {
            GeneratorSpec::Bump { lo, hi, .. } => Some((lo.clone(), hi.clone())),
            _ => Some(mask.inscribed_box()?),
        }
    } else {
        None
    };
    generate_with_support(spec, mask, support.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice())))
}

/// As [`generate`], with an explicit support box when compactly supported.
pub fn generate_with_support(
    spec: &GeneratorSpec,
    mask: &Arc<DomainMask>,
    support: Option<(&[f64], &[f64])>,
) -> Result<VectorField> {
    let dim = mask.dim();
    spec.validate(dim)?;
    let grid = mask.grid();
    let lo = grid.origin().to_vec();
    let len: Vec<f64> = grid
        .upper_corner()
        .iter()
        .zip(&lo)
        .map(|(u, l)| u - l)
        .collect();
    let eval = spec.evaluator(dim, (&lo, &len));
    if let Some((slo, shi)) = support {
        if slo.len() != dim || shi.len() != dim {
            return Err(KornError::Dimension("support box dimension".into()));
        }
        check_support_box(mask, slo, shi)?;
        let is_bump = matches!(spec, GeneratorSpec::Bump { .. });
        let (slo, shi) = (slo.to_vec(), shi.to_vec());
        Ok(VectorField::from_fn(mask.clone(), true, move |x, out| {
            eval(x, out);
            if !is_bump {
                let b = bump_profile(x, &slo, &shi);
                out.iter_mut().for_each(|v| *v *= b);
            }
        }))
    } else {
        Ok(VectorField::from_fn(mask.clone(), false, |x, out| eval(x, out)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize_fitted, ShapeDescriptor};

    fn square(h: f64) -> Arc<DomainMask> {
        Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, h).unwrap())
    }

    #[test]
    fn constant_field_norm_is_area_root() {
        let mask = square(1.0 / 64.0);
        let u = VectorField::from_fn(mask.clone(), false, |_, out| {
            out[0] = 1.0;
            out[1] = 0.0;
        });
        let norm = lp_norm(&u, 2.0, None).unwrap();
        // Node sum over (1/h + 1)^2 nodes: area (1 + h)^2.
        assert!((norm - (1.0 + 1.0 / 64.0)).abs() < 1e-12);
        assert!((norm - 1.0).abs() < 0.02);
    }

    #[test]
    fn identity_has_root_n_frobenius_norm() {
        for dim in 1..=3 {
            let mask = Arc::new(rasterize_fitted(&ShapeDescriptor::unit_box(dim), dim, 0.25).unwrap());
            let eye = MatrixField::identity(mask.clone());
            for node in mask.inside_nodes() {
                assert!((eye.pointwise_norm(node) - (dim as f64).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let u = VectorField::zeros(square(0.1), false);
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert_eq!(lp_norm(&u, p, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn exponent_below_one_is_rejected() {
        let u = VectorField::zeros(square(0.1), false);
        assert!(matches!(lp_norm(&u, 0.5, None), Err(KornError::Parameter(_))));
    }

    #[test]
    fn inner_product_identities() {
        let mask = square(0.125);
        let f = MatrixField::from_fn(mask.clone(), false, |x, m| {
            m[0] = x[0];
            m[1] = x[1] * x[1];
            m[2] = -x[0] * x[1];
            m[3] = 2.0;
        });
        let eye = MatrixField::identity(mask.clone());
        let trace = f.trace().integral();
        assert!((inner(&eye, &f).unwrap() - trace).abs() < 1e-14);
        let n2 = lp_norm(&f, 2.0, None).unwrap();
        assert!((inner(&f, &f).unwrap() - n2 * n2).abs() < 1e-12);
        assert!(inner(&f.sym_part(), &f.skw_part()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn sym_and_skw_parts_are_orthogonal_on_random_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut dot = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let s = 0.5 * (m[3 * i + j] + m[3 * j + i]);
                    let w = 0.5 * (m[3 * i + j] - m[3 * j + i]);
                    dot += s * w;
                }
            }
            assert!(dot.abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_masks_are_rejected() {
        let a = MatrixField::identity(square(0.25));
        let b = MatrixField::identity(square(0.125));
        assert!(matches!(inner(&a, &b), Err(KornError::MaskMismatch)));
    }

    #[test]
    fn rigid_generator_is_rotation() {
        let mask = square(0.25);
        let spec = GeneratorSpec::Rigid {
            translation: vec![0.0, 0.0],
            rotation: vec![vec![0.0, -1.0], vec![1.0, 0.0]],
        };
        let u = generate(&spec, &mask, false).unwrap();
        for node in mask.inside_nodes() {
            let x = mask.grid().coord(node);
            assert_eq!(u.at(node), &[-x[1], x[0]]);
        }
        let bad = GeneratorSpec::Rigid {
            translation: vec![0.0, 0.0],
            rotation: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        assert!(generate(&bad, &mask, false).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let mask = square(1.0 / 16.0);
        for spec in [
            GeneratorSpec::RandomFourier {
                modes: 4,
                decay: 2.0,
                seed: 11,
            },
            GeneratorSpec::Trig {
                frequency: vec![3.0, -2.0],
                seed: 5,
            },
            GeneratorSpec::Polynomial { degree: 3, seed: 2 },
        ] {
            let a = generate(&spec, &mask, true).unwrap();
            let b = generate(&spec, &mask, true).unwrap();
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn bump_vanishes_on_boundary() {
        let mask = square(1.0 / 16.0);
        let spec = GeneratorSpec::Bump {
            lo: vec![0.1, 0.1],
            hi: vec![0.9, 0.8],
            amplitude: vec![1.0, -2.0],
        };
        let u = generate(&spec, &mask, true).unwrap();
        for node in mask.boundary_nodes() {
            assert_eq!(u.at(node), &[0.0, 0.0]);
        }
        assert!(u.sup_norm() > 0.5);
        let outside = GeneratorSpec::Bump {
            lo: vec![-0.1, 0.1],
            hi: vec![0.9, 0.8],
            amplitude: vec![1.0, 1.0],
        };
        assert!(matches!(
            generate(&outside, &mask, true),
            Err(KornError::Contract(_))
        ));
    }

    #[test]
    fn invalid_generator_parameters() {
        let mask = square(0.25);
        let bad_decay = GeneratorSpec::RandomFourier {
            modes: 3,
            decay: 1.0,
            seed: 0,
        };
        assert!(generate(&bad_decay, &mask, false).is_err());
        let zero_freq = GeneratorSpec::Trig {
            frequency: vec![0.0, 0.0],
            seed: 0,
        };
        assert!(generate(&zero_freq, &mask, false).is_err());
    }

    #[test]
    fn extension_by_zero_keeps_norms() {
        let small = square(1.0 / 16.0);
        let big = Arc::new(
            rasterize_fitted(
                &ShapeDescriptor::Box {
                    lo: vec![-0.5, -0.25],
                    hi: vec![1.5, 1.25],
                },
                2,
                1.0 / 16.0,
            )
            .unwrap(),
        );
        let spec = GeneratorSpec::RandomFourier {
            modes: 3,
            decay: 1.5,
            seed: 3,
        };
        let u = generate(&spec, &small, true).unwrap();
        let v = u.extend_by_zero(big).unwrap();
        for p in [1.0, 2.0, 3.5] {
            let a = lp_norm(&u, p, None).unwrap();
            let b = lp_norm(&v, p, None).unwrap();
            assert!((a - b).abs() <= 1e-14 * a);
        }
    }

    #[test]
    fn csv_and_json_exports() {
        let mask = square(0.5);
        let u = VectorField::from_fn(mask, false, |x, out| {
            out[0] = x[0];
            out[1] = x[1];
        });
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x0,x1,u0,u1");
        assert_eq!(text.lines().count(), 10);
        assert_eq!(u.to_json()["nodes"].as_array().unwrap().len(), 9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_is_absolutely_homogeneous(seed in 0u64..1000, c in -50.0f64..50.0, p in 1.0f64..5.0) {
                let mask = square(1.0 / 8.0);
                let spec = GeneratorSpec::RandomFourier { modes: 3, decay: 2.0, seed };
                let u = generate(&spec, &mask, false).unwrap();
                let a = lp_norm(&u.scaled(c), p, None).unwrap();
                let b = c.abs() * lp_norm(&u, p, None).unwrap();
                prop_assert!((a - b).abs() <= 1e-14 * b);
            }
        }
    }
}
