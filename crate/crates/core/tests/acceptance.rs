//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stdout
//! (uncaptured) and then asserts.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use kornlab::cli::boundary_field;
use kornlab::constants::{
    korn_first_p2, korn_general_p, korn_second_p2, paper_constants, poincare_korn_best,
    KornMode, QuotientOptions,
};
use kornlab::diffops::{
    adjointness_defect, curl_identity_residual, grad, identity_residuals, sym_grad,
    StencilFamily,
};
use kornlab::field::{generate, lp_power, GeneratorSpec, GridFunction, MatrixField, VectorField};
use kornlab::geometry::{rasterize_fitted, DomainMask, ShapeDescriptor};
use kornlab::linsolve::{cg_solve, gen_eig_max, gen_eig_min, SparseOperator};
use kornlab::verify::{
    boundary_slack, check_fundrel, default_fundrel_field, log_log_slope, run_corpus, CheckKind,
    CorpusMask,
};

const EXACT: StencilFamily = StencilFamily::DualPair;

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!(
        "acceptance | {name:<34} | {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // Written past the test harness capture so the summary always shows.
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn mask(shape: &ShapeDescriptor, dim: usize, h: f64) -> Arc<DomainMask> {
    Arc::new(rasterize_fitted(shape, dim, h).unwrap())
}

fn square(h: f64) -> Arc<DomainMask> {
    mask(&ShapeDescriptor::unit_square(), 2, h)
}

fn disk(radius: f64, h: f64) -> Arc<DomainMask> {
    mask(&ShapeDescriptor::ball(vec![0.0, 0.0], radius), 2, h)
}

fn fourier(seed: u64) -> GeneratorSpec {
    GeneratorSpec::RandomFourier {
        modes: 4,
        decay: 1.5,
        seed,
    }
}

/// Rotated gradient of the bump `Π (1 − t_k²)³` on `[0.2, 0.8]²`, a
/// divergence-free compactly supported field.
fn rotated_bump_gradient(m: &Arc<DomainMask>) -> VectorField {
    let (lo, hi) = (0.2, 0.8);
    let prof = |x: f64| {
        let t = (2.0 * x - lo - hi) / (hi - lo);
        if t.abs() >= 1.0 {
            (0.0, 0.0)
        } else {
            let s = 1.0 - t * t;
            (s.powi(3), -12.0 * t * s * s / (hi - lo))
        }
    };
    VectorField::from_fn(m.clone(), true, |x, out| {
        let (fx, dfx) = prof(x[0]);
        let (fy, dfy) = prof(x[1]);
        out[0] = -fx * dfy;
        out[1] = dfx * fy;
    })
}

#[test]
fn sharp_first_korn_limit() {
    let start = std::time::Instant::now();
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let mut values = vec![];
    let mut oracle = vec![];
    for &h in &hs {
        let m = square(h);
        values.push(korn_first_p2(&m, EXACT, 1e-8, 0).unwrap().value);
        let u = rotated_bump_gradient(&m);
        let q = lp_power(&grad(&u, EXACT), 2.0, None).unwrap()
            / lp_power(&sym_grad(&u, EXACT), 2.0, None).unwrap();
        oracle.push(q);
    }
    let secs = start.elapsed().as_secs_f64();
    let close = (values[2] - 2.0).abs() <= 0.1;
    // Values equal 2 up to solver tolerance at every level, so
    // monotonicity is read with that tolerance.
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    let below_sup = values.iter().zip(&oracle).all(|(k, q)| *q <= k + 1e-9);
    let oracle_close = (oracle[2] - 2.0).abs() <= 0.1;
    verdict(
        "sharp first-Korn limit",
        close && monotone && below_sup && oracle_close && secs <= 60.0,
        format!("K = {values:.10?}, rotated-bump quotient = {oracle:.6?}, {secs:.1} s"),
    );
}

#[test]
fn korn_bracket_on_suite_shapes() {
    let shapes = [
        ("square", ShapeDescriptor::unit_square()),
        ("ball", ShapeDescriptor::ball(vec![0.0, 0.0], 1.0)),
        ("annulus", ShapeDescriptor::annulus(vec![0.0, 0.0], 0.5, 1.0)),
        ("l-shape", ShapeDescriptor::l_shape(1.0, 0.5)),
    ];
    let mut detail = vec![];
    let mut pass = true;
    for (name, shape) in shapes {
        let m = mask(&shape, 2, 1.0 / 32.0);
        let k = korn_first_p2(&m, EXACT, 1e-8, 0).unwrap().value;
        pass &= (1.0 - 1e-9..=2.0 + 1e-6).contains(&k);
        detail.push(format!("{name} {k:.9}"));
    }
    verdict("first-Korn bracket [1, 2]", pass, detail.join(", "));
}

#[test]
fn identity_suite() {
    let m = square(1.0 / 32.0);
    let worst = |fam: StencilFamily| -> f64 {
        (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let free = generate(&fourier(seed), &m, false).unwrap();
                let compact = generate(&fourier(seed), &m, true).unwrap();
                let r = identity_residuals(&free, fam).unwrap();
                let k = identity_residuals(&compact, fam).unwrap().korn.unwrap();
                r.hodge_skw.max(r.hodge_sym).max(k)
            })
            .reduce(|| 0.0, f64::max)
    };
    let planar = worst(EXACT).max(worst(StencilFamily::Forward));
    let cube = mask(&ShapeDescriptor::unit_box(3), 3, 1.0 / 10.0);
    let curl = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let u = generate(&fourier(seed), &cube, false).unwrap();
            curl_identity_residual(&u, EXACT).unwrap()
        })
        .reduce(|| 0.0, f64::max);
    verdict(
        "Helmholtz and Korn identities",
        planar <= 1e-12 && curl <= 1e-12,
        format!("max residual 2D {planar:.2e}, 3D curl {curl:.2e}, 100 seeds"),
    );
}

fn outer(u: &VectorField, v: &VectorField) -> MatrixField {
    let n = u.dim();
    let mut vals = vec![0.0; u.values().len() * n];
    for (node, block) in vals.chunks_mut(n * n).enumerate() {
        for i in 0..n {
            for j in 0..n {
                block[i * n + j] = u.values()[node * n + i] * v.values()[node * n + j];
            }
        }
    }
    MatrixField::new(u.mask().clone(), vals, true).unwrap()
}

#[test]
fn summation_by_parts() {
    let m = square(1.0 / 32.0);
    let dual = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let u = generate(&fourier(seed), &m, true).unwrap();
            let v = generate(&fourier(seed + 5000), &m, true).unwrap();
            adjointness_defect(&u, &outer(&v, &u), EXACT).unwrap()
        })
        .reduce(|| 0.0, f64::max);
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let centered: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let m = square(h);
            let u = generate(&fourier(3), &m, true).unwrap();
            let v = generate(&fourier(4), &m, true).unwrap();
            adjointness_defect(&u, &outer(&v, &u), StencilFamily::Centered).unwrap()
        })
        .collect();
    // Zero-ghost centered differences are exactly skew-adjoint, so the
    // defect sits at rounding level and carries no slope.
    let floor = 1e-13;
    let at_floor = centered.iter().all(|d| *d <= floor);
    let slope = log_log_slope(&hs, &centered.iter().map(|d| d.max(1e-300)).collect::<Vec<_>>());
    verdict(
        "summation by parts",
        dual <= 1e-13 && (at_floor || slope >= 2.0),
        format!("dual-pair max {dual:.2e}; centered {centered:?} (slope {slope:.2})"),
    );
}

#[test]
fn poincare_korn_corpus() {
    let h = 1.0 / 32.0;
    let masks = vec![
        CorpusMask {
            name: "square".into(),
            mask: square(h),
        },
        CorpusMask {
            name: "ball".into(),
            mask: disk(1.0, h),
        },
    ];
    let corpus: Vec<_> = (0..500).map(fourier).collect();
    let report = run_corpus(
        &[CheckKind::PkWeighted, CheckKind::PkBounded],
        &corpus,
        &masks,
        &[1.0, 1.5, 2.0, 3.0],
    )
    .unwrap();
    let w = report.max_ratio("pk-weighted");
    let b = report.max_ratio("pk-bounded");
    verdict(
        "Poincare-Korn corpus",
        report.pass && w <= 1.0 && b <= 1.0,
        format!(
            "{} checks, max ratio weighted {w:.4}, bounded {b:.4}",
            report.reports.len()
        ),
    );
}

#[test]
fn boundary_poincare_korn() {
    let mut detail = vec![];
    let mut pass = true;
    for h in [1.0 / 64.0, 1.0 / 128.0] {
        let masks = vec![CorpusMask {
            name: "square".into(),
            mask: square(h),
        }];
        let corpus: Vec<_> = (0..200).map(|s| boundary_field(s, 2)).collect();
        let report =
            run_corpus(&[CheckKind::PkBoundary], &corpus, &masks, &[1.0, 1.5, 2.0, 3.0]).unwrap();
        let worst = report.max_ratio("pk-boundary");
        let slack = boundary_slack(h);
        pass &= report.pass && worst <= 1.0 + slack;
        detail.push(format!("h={h}: max ratio {worst:.4} (slack {slack})"));
    }
    verdict("boundary Poincare-Korn", pass, detail.join(", "));
}

#[test]
fn best_constant_below_explicit_bound() {
    let m = square(1.0 / 64.0);
    let est = poincare_korn_best(&m, 2.0, false, EXACT, 1e-8, 0).unwrap();
    let kappa = paper_constants(2.0, 2, 2f64.sqrt()).unwrap().kappa_omega;
    let printed = 2.414214;
    verdict(
        "best constant below kappa",
        est.value <= kappa && (kappa - printed).abs() < 5e-7 && est.residual <= 1e-8,
        format!(
            "best {:.6} <= kappa {kappa:.6}, eigen residual {:.1e}",
            est.value, est.residual
        ),
    );
}

#[test]
fn scale_invariance_on_balls() {
    let h = 1.0 / 16.0;
    let a = korn_first_p2(&disk(1.0, h), EXACT, 1e-10, 0).unwrap();
    let b = korn_first_p2(&disk(2.0, 2.0 * h), EXACT, 1e-10, 0).unwrap();
    let diff = (a.value - b.value).abs();
    verdict(
        "dilation invariance",
        diff <= 1e-10,
        format!("ball r {:.12}, ball 2r {:.12}, diff {diff:.1e}", a.value, b.value),
    );
}

#[test]
fn key_relation_convergence() {
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let spec = default_fundrel_field(2);
    let slopes: Vec<f64> = [1.5, 2.0, 3.0]
        .iter()
        .map(|&p| {
            let r = check_fundrel(
                &spec,
                &ShapeDescriptor::unit_square(),
                2,
                p,
                None,
                &hs,
                StencilFamily::Centered,
            )
            .unwrap();
            assert!(!r.exact);
            r.slope
        })
        .collect();
    verdict(
        "key relation convergence",
        slopes.iter().all(|s| *s >= 1.0),
        format!("log-log slopes for p = 1.5, 2, 3: {slopes:.3?}"),
    );
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let x = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    x.transpose() * &x + DMatrix::identity(n, n) * shift
}

fn sparse(m: &DMatrix<f64>) -> SparseOperator {
    SparseOperator::from_dense(m, true).unwrap()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[test]
fn solver_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut eig_err = 0.0f64;
    for _ in 0..20 {
        let a = symmetrize(random_spd(&mut rng, 8, 0.0));
        let b = symmetrize(random_spd(&mut rng, 8, 0.5));
        let l = b.clone().cholesky().unwrap().l();
        let li = l.clone().try_inverse().unwrap();
        let c = symmetrize(&li * &a * li.transpose());
        let ev = SymmetricEigen::new(c).eigenvalues;
        let (lo, hi) = (ev.min(), ev.max());
        let (sa, sb) = (sparse(&a), sparse(&b));
        let max = gen_eig_max(&sa, &sb, 1e-10, 1).unwrap().eigenvalue;
        let min = gen_eig_min(&sa, &sb, 1e-10, 1).unwrap().eigenvalue;
        eig_err = eig_err
            .max((max - hi).abs() / hi.abs().max(1.0))
            .max((min - lo).abs() / lo.abs().max(1.0));
    }
    let mut cg_err = 0.0f64;
    for _ in 0..20 {
        let a = symmetrize(random_spd(&mut rng, 10, 1.0));
        let b = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let exact = a.clone().cholesky().unwrap().solve(&b);
        let x = cg_solve(&sparse(&a), b.as_slice(), 1e-13).unwrap();
        let err = (DVector::from_vec(x) - &exact).norm() / exact.norm();
        cg_err = cg_err.max(err);
    }
    verdict(
        "solver oracles",
        eig_err <= 1e-8 && cg_err <= 1e-10,
        format!("gen-eig max rel error {eig_err:.1e}, cg {cg_err:.1e}"),
    );
}

#[test]
fn optimizer_matches_eigensolver() {
    let h = 1.0 / 16.0;
    let opts = QuotientOptions::default();
    let mut detail = vec![];
    let mut pass = true;
    for (name, m) in [("square", square(h)), ("ball", disk(1.0, h))] {
        for mode in [KornMode::First, KornMode::Second] {
            let sharp = match mode {
                KornMode::First => korn_first_p2(&m, EXACT, 1e-10, 0),
                _ => korn_second_p2(&m, EXACT, 1e-10, 0),
            }
            .unwrap()
            .value;
            let ascent = korn_general_p(&m, 2.0, mode, EXACT, &opts).unwrap().value;
            let rel = (ascent - sharp).abs() / sharp;
            pass &= rel <= 0.01 && ascent <= sharp * (1.0 + 1e-8);
            detail.push(format!("{name}/{mode} {ascent:.6} vs {sharp:.6}"));
        }
    }
    verdict("optimizer vs eigensolver", pass, detail.join(", "));
}
