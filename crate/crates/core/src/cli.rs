//! Command-line driver.
//!
//! Every subcommand takes the same [`RunConfig`] flags, optionally merged
//! over a TOML file given with `--config`. Flags win over the file. Tables
//! go to stdout and, when an output directory is known (`--out-dir` or
//! `KORNLAB_OUT_DIR`), to `<dir>/<table>.csv` or `.json`.
//!
//! Exit status: 0 pass, 1 check violation, 2 usage error, 3 solver
//! non-convergence.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{
    korn_first_p2_with, korn_general_p, korn_second_p2_with, paper_constants,
    poincare_korn_best, BoundDirection, EstimateRecord, KornEstimate, KornMode,
    QuotientOptions,
};
use crate::diffops::{
    adjointness_defect, curl_identity_residual, identity_residuals, StencilFamily,
};
use crate::error::{KornError, Result};
use crate::field::{generate, GeneratorSpec, GridFunction, MatrixField, VectorField};
use crate::geometry::{rasterize_fitted, DomainMask, ShapeDescriptor};
use crate::linsolve::EigenOptions;
use crate::verify::{
    check_fundrel, default_fundrel_field, run_corpus, write_dossier, CheckKind, CorpusMask,
    CorpusReport, FundrelRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Default output directory when `--out-dir` is absent.
pub const OUT_DIR_ENV: &str = "KORNLAB_OUT_DIR";

/// First line of every CSV table, followed by the table name.
pub const CSV_SCHEMA: &str = "# kornlab-csv v1";

#[derive(Debug, Parser)]
#[command(name = "kornlab", version, about = "Discrete Korn and Poincare-Korn constants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Residuals of the discrete vector-calculus identities over seeded fields.
    Identities(Invocation),
    /// Korn constants (first, second or general p) under refinement.
    Korn(Invocation),
    /// Best Poincare-Korn constants against the explicit bounds.
    Pk(Invocation),
    /// Inequality checks over a seeded corpus.
    Verify(Invocation),
    /// Parametric sweep over p, cusp exponent or box aspect ratio.
    Sweep(Invocation),
    /// Explicit constants for given p, N and diameter.
    Info(Invocation),
}

#[derive(Debug, Args)]
struct Invocation {
    /// TOML file with the same keys as the long flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Parameters of a run. Unset fields take per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    /// square, box, box:AxB, ball, ball:R, annulus, l-shape, cusp, cusp:ALPHA,
    /// or a JSON shape descriptor.
    #[arg(long)]
    pub shape: Option<String>,
    /// Space dimension.
    #[arg(long = "N", visible_alias = "dim")]
    #[serde(rename = "N")]
    pub dim: Option<usize>,
    /// Grid spacing.
    #[arg(long)]
    pub h: Option<f64>,
    /// Refinement levels as 1/h, comma separated; overrides --h.
    #[arg(long, value_delimiter = ',')]
    pub refine: Option<Vec<u32>>,
    /// Exponents, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// forward, backward, centered or dual-pair.
    #[arg(long)]
    pub family: Option<String>,
    /// first, second, pk-plain or pk-weighted.
    #[arg(long)]
    pub mode: Option<String>,
    /// Weighted Poincare-Korn quotient.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub weighted: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeded fields.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Eigen residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Residual threshold of the identity checks.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Iteration cap of the eigensolver or of each ascent level.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Restarts of the quotient ascent.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// acceptance or quick.
    #[arg(long)]
    pub suite: Option<String>,
    /// p, cusp or aspect.
    #[arg(long)]
    pub vary: Option<String>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Domain diameter for `info`.
    #[arg(long)]
    pub diam: Option<f64>,
    /// Also run the shape dilated by this factor on a co-scaled grid.
    #[arg(long)]
    pub dilation: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    /// Parses TOML configuration text.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| KornError::Parse(e.to_string()))
    }

    /// Canonical TOML text; [`RunConfig::from_toml`] reads it back unchanged.
    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KornError::Parse(e.to_string()))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn merged(mut self, flags: RunConfig) -> Self {
        overlay!(self, flags; shape, dim, h, refine, p, family, mode, weighted, seed, seeds,
            tol, threshold, max_iter, restarts, suite, vary, from, to, steps, diam,
            dilation, out_dir, format, jobs);
        self
    }

    fn dim(&self) -> Result<usize> {
        match self.dim.unwrap_or(2) {
            d @ 1..=3 => Ok(d),
            d => Err(KornError::Parameter(format!("N must be 1, 2 or 3, got {d}"))),
        }
    }

    fn shape_name(&self) -> &str {
        self.shape.as_deref().unwrap_or("square")
    }

    fn shape(&self) -> Result<ShapeDescriptor> {
        parse_shape(self.shape_name(), self.dim()?)
    }

    fn family(&self, default: StencilFamily) -> Result<StencilFamily> {
        self.family.as_deref().map_or(Ok(default), str::parse)
    }

    fn mode(&self) -> Result<KornMode> {
        self.mode.as_deref().map_or(Ok(KornMode::First), str::parse)
    }

    fn ps(&self) -> Result<Vec<f64>> {
        let ps = self.p.clone().unwrap_or_else(|| vec![2.0]);
        if ps.is_empty() || ps.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return Err(KornError::Parameter(format!("invalid p list {ps:?}")));
        }
        Ok(ps)
    }

    /// Grid spacings: `--refine` levels, else `--h`, else `default`.
    fn spacings(&self, default: f64) -> Result<Vec<f64>> {
        let hs = match (&self.refine, self.h) {
            (Some(r), _) => r.iter().map(|&n| 1.0 / n as f64).collect(),
            (None, Some(h)) => vec![h],
            (None, None) => vec![default],
        };
        if hs.is_empty() || hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(KornError::Parameter(format!("invalid grid spacing {hs:?}")));
        }
        Ok(hs)
    }

    fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-8)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn quotient_options(&self) -> QuotientOptions {
        let mut o = QuotientOptions {
            seed: self.seed(),
            ..QuotientOptions::default()
        };
        if let Some(r) = self.restarts {
            o.restarts = r;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        o
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.tol(),
            seed: self.seed(),
            max_iter: self.max_iter,
            ..EigenOptions::default()
        }
    }

    fn sink(&self) -> Sink {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
        Sink {
            dir,
            format: self.format.unwrap_or(Format::Csv),
        }
    }
}

/// Parses a shape flag for dimension `dim`.
///
/// Named shapes: `square`/`box` (unit box), `box:AxB[xC]` (box `[0,A]x[0,B]`),
/// `ball[:R]` (centred at the origin, default radius 1), `annulus` (radii
/// 0.5 and 1), `l-shape` (arms 1 by 0.5), `cusp[:ALPHA]` (default 2, length
/// 1). A string starting with `{` is read as a JSON shape descriptor.
pub fn parse_shape(text: &str, dim: usize) -> Result<ShapeDescriptor> {
    let text = text.trim();
    let shape = if text.starts_with('{') {
        serde_json::from_str(text).map_err(|e| KornError::Parse(format!("shape JSON: {e}")))?
    } else {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        let number = |a: &str| -> Result<f64> {
            a.parse::<f64>()
                .map_err(|_| KornError::Parse(format!("bad number '{a}' in shape '{text}'")))
        };
        match (name, arg) {
            ("square" | "box" | "cube", None) => ShapeDescriptor::unit_box(dim),
            ("box", Some(a)) => {
                let hi = a.split('x').map(number).collect::<Result<Vec<_>>>()?;
                if hi.len() != dim {
                    return Err(KornError::Parse(format!(
                        "box '{a}' needs {dim} side lengths"
                    )));
                }
                ShapeDescriptor::Box {
                    lo: vec![0.0; dim],
                    hi,
                }
            }
            ("ball", r) => ShapeDescriptor::ball(vec![0.0; dim], r.map_or(Ok(1.0), number)?),
            ("annulus", None) => ShapeDescriptor::annulus(vec![0.0; dim], 0.5, 1.0),
            ("l-shape", None) => ShapeDescriptor::l_shape(1.0, 0.5),
            ("cusp", a) => ShapeDescriptor::Cusp {
                alpha: a.map_or(Ok(2.0), number)?,
                length: 1.0,
            },
            _ => return Err(KornError::Parse(format!("unknown shape '{text}'"))),
        }
    };
    shape.validate(dim)?;
    Ok(shape)
}

/// Table writer: stdout plus an optional file in the output directory.
struct Sink {
    dir: Option<PathBuf>,
    format: Format,
}

impl Sink {
    fn emit<R: Serialize>(&self, table: &str, rows: &[R]) -> Result<()> {
        let (text, ext) = match self.format {
            Format::Csv => (csv_table(table, rows)?, "csv"),
            Format::Json => (json_table(rows)?, "json"),
        };
        print!("{text}");
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{table}.{ext}")), text)?;
        }
        Ok(())
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }
}

/// CSV text with the versioned schema line.
pub fn csv_table<R: Serialize>(table: &str, rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).map_err(|e| KornError::Parse(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| KornError::Parse(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| KornError::Parse(e.to_string()))?;
    Ok(format!("{CSV_SCHEMA} {table}\n{body}"))
}

fn json_table<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(rows).map_err(|e| KornError::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Exit status of an error.
pub fn exit_code(e: &KornError) -> i32 {
    match e {
        KornError::NonConvergence { .. } | KornError::OptimizationStall { .. } => {
            EXIT_NONCONVERGENCE
        }
        _ => EXIT_USAGE,
    }
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, inv) = match cli.command {
        Command::Identities(i) => ("identities", i),
        Command::Korn(i) => ("korn", i),
        Command::Pk(i) => ("pk", i),
        Command::Verify(i) => ("verify", i),
        Command::Sweep(i) => ("sweep", i),
        Command::Info(i) => ("info", i),
    };
    let config = match load(inv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kornlab: {e}");
            return EXIT_USAGE;
        }
    };
    let result = match config.jobs {
        Some(0) => Err(KornError::Parameter("--jobs must be positive".into())),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| dispatch(name, &config)),
            Err(e) => Err(KornError::Parameter(e.to_string())),
        },
        None => dispatch(name, &config),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("kornlab {name}: {e}");
            exit_code(&e)
        }
    }
}

fn load(inv: Invocation) -> Result<RunConfig> {
    let base = match &inv.config {
        Some(path) => RunConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    Ok(base.merged(inv.flags))
}

/// Runs one subcommand on a resolved configuration.
pub fn dispatch(command: &str, config: &RunConfig) -> Result<i32> {
    match command {
        "identities" => cmd_identities(config),
        "korn" => cmd_korn(config),
        "pk" => cmd_pk(config),
        "verify" => cmd_verify(config),
        "sweep" => cmd_sweep(config),
        "info" => cmd_info(config),
        other => Err(KornError::Parameter(format!("unknown command '{other}'"))),
    }
}

fn mask_for(shape: &ShapeDescriptor, dim: usize, h: f64) -> Result<Arc<DomainMask>> {
    Ok(Arc::new(rasterize_fitted(shape, dim, h)?))
}

fn status(all_pass: bool) -> i32 {
    if all_pass {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct IdentityRow {
    identity: String,
    family: StencilFamily,
    h: f64,
    seed: u64,
    residual: f64,
    threshold: f64,
    pass: bool,
}

fn fourier(seed: u64) -> GeneratorSpec {
    GeneratorSpec::RandomFourier {
        modes: 4,
        decay: 1.5,
        seed,
    }
}

/// `Φ = u ⊗ v` node by node.
fn outer(u: &VectorField, v: &VectorField) -> Result<MatrixField> {
    let n = u.dim();
    let mut vals = vec![0.0; u.values().len() * n];
    for (node, block) in vals.chunks_mut(n * n).enumerate() {
        for i in 0..n {
            for j in 0..n {
                block[i * n + j] = u.values()[node * n + i] * v.values()[node * n + j];
            }
        }
    }
    MatrixField::new(u.mask().clone(), vals, true)
}

/// Identity residuals over `--seeds` random Fourier fields (default 100).
///
/// Helmholtz-type identities use the field as generated; the Korn identity
/// and integration by parts use its compactly supported version. Adjointness
/// is measured with the dual pair, or with centered differences when the
/// centered family is selected. In 3D the curl identity is added.
pub fn cmd_identities(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let shape = config.shape()?;
    let fam = config.family(StencilFamily::Forward)?;
    let adj_fam = if fam == StencilFamily::Centered {
        StencilFamily::Centered
    } else {
        StencilFamily::DualPair
    };
    let threshold = config.threshold.unwrap_or(1e-12);
    let seeds = config.seeds.unwrap_or(100);
    let base = config.seed();
    let mut rows = vec![];
    for h in config.spacings(1.0 / 32.0)? {
        let mask = mask_for(&shape, dim, h)?;
        let blocks: Vec<Result<Vec<IdentityRow>>> = (0..seeds as u64)
            .into_par_iter()
            .map(|k| {
                let seed = base + k;
                let free = generate(&fourier(seed), &mask, false)?;
                let compact = generate(&fourier(seed), &mask, true)?;
                let other = generate(&fourier(seed + 1_000_000), &mask, true)?;
                let mut found: Vec<(String, StencilFamily, f64)> = identity_residuals(&free, fam)?
                    .records(fam, h)
                    .into_iter()
                    .map(|r| (r.identity, r.family, r.residual))
                    .collect();
                if let Some(k) = identity_residuals(&compact, fam)?.korn {
                    found.push(("korn".into(), fam, k));
                }
                if dim == 3 {
                    found.push(("curl-curl".into(), fam, curl_identity_residual(&free, fam)?));
                }
                let phi = outer(&other, &compact)?;
                found.push((
                    "adjointness".into(),
                    adj_fam,
                    adjointness_defect(&compact, &phi, adj_fam)?,
                ));
                Ok(found
                    .into_iter()
                    .map(|(identity, family, residual)| IdentityRow {
                        identity,
                        family,
                        h,
                        seed,
                        residual,
                        threshold,
                        pass: residual <= threshold,
                    })
                    .collect())
            })
            .collect();
        for b in blocks {
            rows.extend(b?);
        }
    }
    let worst = rows.iter().map(|r| r.residual).fold(0.0f64, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    config.sink().emit("identities", &rows)?;
    eprintln!(
        "identities: {} rows, max residual {worst:.3e}, threshold {threshold:e}: {}",
        rows.len(),
        if pass { "pass" } else { "FAIL" }
    );
    Ok(status(pass))
}

fn estimate(
    config: &RunConfig,
    mask: &Arc<DomainMask>,
    p: f64,
    mode: KornMode,
    fam: StencilFamily,
) -> Result<KornEstimate> {
    let eig = config.eigen_options();
    match mode {
        KornMode::First if p == 2.0 => korn_first_p2_with(mask, fam, &eig),
        KornMode::Second if p == 2.0 => korn_second_p2_with(mask, fam, &eig),
        KornMode::PkPlain | KornMode::PkWeighted if p == 2.0 => poincare_korn_best(
            mask,
            p,
            mode == KornMode::PkWeighted,
            fam,
            eig.tol,
            eig.seed,
        ),
        _ => korn_general_p(mask, p, mode, fam, &config.quotient_options()),
    }
}

/// Korn constants over the refinement levels and exponents; with
/// `--dilation s` each level is repeated on the shape scaled by `s`
/// with spacing `s h`.
pub fn cmd_korn(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let shape = config.shape()?;
    let name = config.shape_name().to_string();
    let mode = config.mode()?;
    let fam = config.family(StencilFamily::DualPair)?;
    let mut jobs = vec![];
    for h in config.spacings(1.0 / 32.0)? {
        jobs.push((name.clone(), shape.clone(), h));
        if let Some(s) = config.dilation {
            if !(s.is_finite() && s > 0.0) {
                return Err(KornError::Parameter(format!("invalid dilation {s}")));
            }
            let dilated = shape.clone().scaled(s, vec![0.0; dim]);
            jobs.push((format!("{name}@x{s}"), dilated, h * s));
        }
    }
    let mut rows: Vec<EstimateRecord> = vec![];
    for (label, sh, h) in &jobs {
        let mask = mask_for(sh, dim, *h)?;
        for &p in &config.ps()? {
            let est = estimate(config, &mask, p, mode, fam)?;
            rows.push(est.record(label));
        }
    }
    config.sink().emit("korn", &rows)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct PkRow {
    shape: String,
    p: f64,
    mode: KornMode,
    h: f64,
    value: f64,
    bound_direction: BoundDirection,
    residual: f64,
    seed: u64,
    bound: f64,
    pass: bool,
}

/// Best Poincare-Korn constants compared with the explicit bounds:
/// `κ_{p,Ω}` for the plain quotient, `C_{p,N}` for the weighted one.
///
/// For `p ≠ 2` the value is a lower bound from the quotient ascent, so a
/// pass there is evidence, not proof.
pub fn cmd_pk(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let shape = config.shape()?;
    let weighted = config.weighted.unwrap_or(false);
    let mode = if weighted {
        KornMode::PkWeighted
    } else {
        KornMode::PkPlain
    };
    let fam = config.family(StencilFamily::DualPair)?;
    let mut rows = vec![];
    for h in config.spacings(1.0 / 32.0)? {
        let mask = mask_for(&shape, dim, h)?;
        for &p in &config.ps()? {
            let est = estimate(config, &mask, p, mode, fam)?;
            let pc = paper_constants(p, dim, mask.diameter())?;
            let bound = if weighted { pc.c_pn } else { pc.kappa_omega };
            let rec = est.record(config.shape_name());
            rows.push(PkRow {
                shape: rec.shape,
                p,
                mode,
                h: rec.h,
                value: rec.value,
                bound_direction: rec.bound_direction,
                residual: rec.residual,
                seed: rec.seed,
                bound,
                pass: rec.value <= bound,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    config.sink().emit("pk", &rows)?;
    Ok(status(pass))
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyRow {
    check_name: String,
    shape: Option<String>,
    seed: Option<u64>,
    h: f64,
    p: f64,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    pass: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct FundrelRow {
    p: f64,
    eps: f64,
    family: StencilFamily,
    h: f64,
    lhs: f64,
    rhs: f64,
    residual: f64,
    slope: f64,
    pass: bool,
}

/// Sizes of a verification suite.
struct Suite {
    pk_seeds: u64,
    pk_h: f64,
    boundary_seeds: u64,
    boundary_hs: Vec<f64>,
    trace_seeds: u64,
    fundrel_hs: Vec<f64>,
}

impl Suite {
    fn named(name: &str) -> Result<Self> {
        match name {
            "acceptance" => Ok(Suite {
                pk_seeds: 500,
                pk_h: 1.0 / 32.0,
                boundary_seeds: 200,
                boundary_hs: vec![1.0 / 64.0, 1.0 / 128.0],
                trace_seeds: 100,
                fundrel_hs: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            }),
            "quick" => Ok(Suite {
                pk_seeds: 20,
                pk_h: 1.0 / 16.0,
                boundary_seeds: 10,
                boundary_hs: vec![1.0 / 16.0, 1.0 / 32.0],
                trace_seeds: 10,
                fundrel_hs: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            }),
            other => Err(KornError::Parameter(format!(
                "unknown suite '{other}' (acceptance or quick)"
            ))),
        }
    }
}

/// Trig field with a nonzero boundary trace, frequency cycling through 1..4.
pub fn boundary_field(seed: u64, dim: usize) -> GeneratorSpec {
    let mut frequency = vec![1.0; dim];
    let mut s = seed;
    for f in frequency.iter_mut() {
        *f = 1.0 + (s % 4) as f64;
        s /= 4;
    }
    GeneratorSpec::Trig { frequency, seed }
}

/// The verification corpus: Poincare-Korn checks on the square and the
/// ball, the boundary check on the square under refinement, the
/// divergence-trace bound and the key-relation refinement study.
pub fn cmd_verify(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let suite = Suite::named(config.suite.as_deref().unwrap_or("acceptance"))?;
    let ps = config
        .p
        .clone()
        .unwrap_or_else(|| vec![1.0, 1.5, 2.0, 3.0]);
    let base = config.seed();
    let named = |name: &str, h: f64| -> Result<CorpusMask> {
        Ok(CorpusMask {
            name: name.to_string(),
            mask: mask_for(&parse_shape(name, dim)?, dim, h)?,
        })
    };

    let pk_masks = vec![named("square", suite.pk_h)?, named("ball", suite.pk_h)?];
    let pk_corpus: Vec<_> = (0..suite.pk_seeds).map(|k| fourier(base + k)).collect();
    let mut reports = vec![run_corpus(
        &[CheckKind::PkWeighted, CheckKind::PkBounded],
        &pk_corpus,
        &pk_masks,
        &ps,
    )?];
    let mut masks = pk_masks;

    let b_masks: Vec<CorpusMask> = suite
        .boundary_hs
        .iter()
        .map(|&h| named("square", h))
        .collect::<Result<_>>()?;
    let b_corpus: Vec<_> = (0..suite.boundary_seeds)
        .map(|k| boundary_field(base + k, dim))
        .collect();
    reports.push(run_corpus(&[CheckKind::PkBoundary], &b_corpus, &b_masks, &ps)?);
    masks.extend(b_masks);

    let t_corpus: Vec<_> = (0..suite.trace_seeds).map(|k| fourier(base + k)).collect();
    let t_masks = vec![named("square", suite.pk_h)?];
    reports.push(run_corpus(&[CheckKind::DivTrace], &t_corpus, &t_masks, &[2.0])?);

    let merged = CorpusReport {
        failures: reports.iter().map(|r| r.failures).sum(),
        pass: reports.iter().all(|r| r.pass),
        reports: reports.into_iter().flat_map(|r| r.reports).collect(),
    };

    let fam = config.family(StencilFamily::Centered)?;
    let fundrel: Vec<FundrelRecord> = [1.5, 2.0, 3.0]
        .par_iter()
        .map(|&p| {
            check_fundrel(
                &default_fundrel_field(dim),
                &ShapeDescriptor::unit_box(dim),
                dim,
                p,
                None,
                &suite.fundrel_hs,
                fam,
            )
        })
        .collect::<Result<_>>()?;
    let fundrel_pass = fundrel.iter().all(|r| r.pass(1.0));

    let rows: Vec<VerifyRow> = merged
        .reports
        .iter()
        .map(|r| VerifyRow {
            check_name: r.check_name.clone(),
            shape: r.shape.clone(),
            seed: r.seed,
            h: r.h,
            p: r.p,
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            pass: r.pass,
        })
        .collect();
    let frows: Vec<FundrelRow> = fundrel
        .iter()
        .flat_map(|r| {
            r.levels.iter().map(move |l| FundrelRow {
                p: r.p,
                eps: r.eps,
                family: r.family,
                h: l.h,
                lhs: l.lhs,
                rhs: l.rhs,
                residual: l.residual,
                slope: r.slope,
                pass: r.pass(1.0),
            })
        })
        .collect();
    let sink = config.sink();
    sink.emit("verify", &rows)?;
    sink.emit("fundrel", &frows)?;
    if !merged.pass {
        if let Some(path) = sink.path("verify-dossier.json") {
            write_dossier(&merged, &masks, &path)?;
        }
    }
    for check in ["pk-weighted", "pk-bounded", "pk-boundary", "div-trace"] {
        eprintln!("verify: {check} max ratio {:.4}", merged.max_ratio(check));
    }
    eprintln!(
        "verify: {} checks, {} failures, fundrel {}",
        merged.reports.len(),
        merged.failures,
        if fundrel_pass { "pass" } else { "FAIL" }
    );
    Ok(status(merged.pass && fundrel_pass))
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepRow {
    vary: String,
    parameter: f64,
    shape: String,
    p: f64,
    mode: KornMode,
    h: f64,
    value: f64,
    bound_direction: BoundDirection,
    residual: f64,
    seed: u64,
}

fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![from],
        n => (0..n)
            .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// One row per parameter value; cells run concurrently and are merged in
/// parameter order. No pass/fail semantics.
pub fn cmd_sweep(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let vary = config.vary.clone().unwrap_or_else(|| "p".into());
    let (from, to) = match vary.as_str() {
        "p" => (1.1, 4.0),
        "cusp" => (1.0, 3.0),
        "aspect" => (1.0, 4.0),
        other => {
            return Err(KornError::Parameter(format!(
                "unknown sweep '{other}' (p, cusp or aspect)"
            )))
        }
    };
    let values = linspace(
        config.from.unwrap_or(from),
        config.to.unwrap_or(to),
        config.steps.unwrap_or(8),
    );
    let mode = config.mode()?;
    let fam = config.family(StencilFamily::DualPair)?;
    let h = config.spacings(1.0 / 16.0)?[0];
    let p_fixed = config.ps()?[0];
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&t| {
            let (shape, label, p) = match vary.as_str() {
                "p" => (config.shape()?, config.shape_name().to_string(), t),
                "cusp" => (
                    ShapeDescriptor::Cusp {
                        alpha: t,
                        length: 1.0,
                    },
                    format!("cusp:{t}"),
                    p_fixed,
                ),
                _ => {
                    let mut hi = vec![1.0; dim];
                    hi[0] = t;
                    let label = format!("box:{}", hi.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x"));
                    (
                        ShapeDescriptor::Box {
                            lo: vec![0.0; dim],
                            hi,
                        },
                        label,
                        p_fixed,
                    )
                }
            };
            let mask = mask_for(&shape, dim, h)?;
            let rec = estimate(config, &mask, p, mode, fam)?.record(&label);
            Ok(SweepRow {
                vary: vary.clone(),
                parameter: t,
                shape: rec.shape,
                p: rec.p,
                mode: rec.mode,
                h: rec.h,
                value: rec.value,
                bound_direction: rec.bound_direction,
                residual: rec.residual,
                seed: rec.seed,
            })
        })
        .collect::<Result<_>>()?;
    config.sink().emit("sweep", &rows)?;
    Ok(EXIT_OK)
}

/// Prints `C_{p,N}`, `κ_{p,Ω}` and `κ_{p,∂Ω}` for each `p`.
pub fn cmd_info(config: &RunConfig) -> Result<i32> {
    let dim = config.dim()?;
    let diam = config.diam.unwrap_or(1.0);
    let rows = config
        .ps()?
        .into_iter()
        .map(|p| paper_constants(p, dim, diam))
        .collect::<Result<Vec<_>>>()?;
    for c in &rows {
        eprintln!(
            "p={} N={} diam={}: C={:.6} kappa={:.6} kappa_boundary={:.6}",
            c.p, c.dim, c.diam, c.c_pn, c.kappa_omega, c.kappa_boundary
        );
    }
    config.sink().emit("info", &rows)?;
    Ok(EXIT_OK)
}
