//! Rasterizes the built-in shapes and prints node counts, volume and
//! boundary-measure estimates.
//!
//!     cargo run --release --example rasterize_shapes -- 0.03125

use kornlab::geometry::{rasterize_fitted, ShapeDescriptor};

fn main() -> kornlab::Result<()> {
    let h: f64 = std::env::args()
        .nth(1)
        .map_or(1.0 / 32.0, |s| s.parse().expect("spacing"));
    let shapes = [
        ("square", ShapeDescriptor::unit_square()),
        ("ball", ShapeDescriptor::ball(vec![0.0, 0.0], 1.0)),
        ("annulus", ShapeDescriptor::annulus(vec![0.0, 0.0], 0.5, 1.0)),
        ("l-shape", ShapeDescriptor::l_shape(1.0, 0.5)),
        ("cusp", ShapeDescriptor::Cusp { alpha: 2.0, length: 1.0 }),
        (
            "square minus disk",
            ShapeDescriptor::unit_square()
                .difference(ShapeDescriptor::ball(vec![0.5, 0.5], 0.25)),
        ),
    ];
    println!("{:<18} {:>7} {:>7} {:>9} {:>9} {:>9}", "shape", "inside", "bdry", "volume", "exact", "perimeter");
    for (name, shape) in shapes {
        let mask = rasterize_fitted(&shape, 2, h)?;
        let exact = shape.volume(2).map_or("-".to_string(), |v| format!("{v:.5}"));
        println!(
            "{:<18} {:>7} {:>7} {:>9.5} {:>9} {:>9.4}",
            name,
            mask.inside_count(),
            mask.boundary_count(),
            mask.volume_estimate(),
            exact,
            mask.boundary_weights().total(),
        );
    }
    Ok(())
}
