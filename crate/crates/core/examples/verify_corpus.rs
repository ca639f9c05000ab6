//! Runs the inequality checks over a small seeded corpus and writes a
//! dossier of any failures.

use std::sync::Arc;

use kornlab::field::GeneratorSpec;
use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};
use kornlab::verify::{run_corpus, write_dossier, CheckKind, CorpusMask};

fn main() -> kornlab::Result<()> {
    let h = 1.0 / 32.0;
    let masks = vec![
        CorpusMask {
            name: "square".into(),
            mask: Arc::new(rasterize_fitted(&ShapeDescriptor::unit_square(), 2, h)?),
        },
        CorpusMask {
            name: "disk".into(),
            mask: Arc::new(rasterize_fitted(&ShapeDescriptor::ball(vec![0.0, 0.0], 1.0), 2, h)?),
        },
    ];
    let corpus: Vec<_> = (0..50)
        .map(|seed| GeneratorSpec::RandomFourier { modes: 4, decay: 1.5, seed })
        .collect();
    let checks = [
        CheckKind::PkWeighted,
        CheckKind::PkBounded,
        CheckKind::PkBoundary,
        CheckKind::DivTrace,
    ];
    let report = run_corpus(&checks, &corpus, &masks, &[1.0, 1.5, 2.0, 3.0])?;
    for name in ["pk-weighted", "pk-bounded", "pk-boundary", "div-trace"] {
        println!("{name:<12} max ratio {:.4}", report.max_ratio(name));
    }
    println!("{} checks, {} failures", report.reports.len(), report.failures);
    if !report.pass {
        let path = std::env::temp_dir().join("kornlab-dossier.json");
        write_dossier(&report, &masks, &path)?;
        println!("dossier: {}", path.display());
    }
    std::process::exit(report.exit_status());
}
