//! A field on an arbitrary line arrangement in a convex polygon.

use polyfield::dynamics::sample_exact;
use polyfield::geometry::{build_tessellation, polygon_area, Domain, Line, Point};
use polyfield::io::tessellation_to_json;
use polyfield::model::{derive_params, log_partition_function};
use polyfield::oracle::enumerate_exact;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hexagon: Vec<Point> = (0..6)
        .map(|i| std::f64::consts::FRAC_PI_3 * i as f64)
        .map(|a| Point::new(5.0 * a.cos(), 5.0 * a.sin()))
        .collect();
    let domain = Domain::polygon(hexagon)?;
    let lines = vec![
        Line::from_polar(0, 0.2, 0.5, 0.4)?,
        Line::from_polar(1, 1.3, -1.0, 0.6)?,
        Line::from_polar(2, 2.4, 1.5, 0.5)?,
        Line::new(3, 1.0, 1.0, 2.0, 0.3)?,
    ];
    let t = Arc::new(build_tessellation(lines, domain)?);
    println!(
        "{} nodes, {} segments, {} cells",
        t.num_nodes(),
        t.num_segments(),
        t.num_cells()
    );
    for (i, c) in t.cells().iter().enumerate() {
        println!(
            "  cell {i}: area {:.3}, {} sides",
            polygon_area(&c.polygon),
            c.polygon.len()
        );
    }

    let p = derive_params(3, 0.5)?;
    let exact = enumerate_exact(t.clone(), &p, None)?;
    println!(
        "Z = {:.10} by enumeration, {:.10} closed form",
        exact.z,
        log_partition_function(&t, &p).exp()
    );
    for seed in 0..3 {
        let m = sample_exact(&t, &p, seed);
        println!(
            "seed {seed}: colours {:?}, {} active segments",
            m.colours(),
            m.active_count()
        );
    }
    println!(
        "tessellation document: {} bytes of JSON",
        tessellation_to_json(&t).len()
    );
    Ok(())
}
