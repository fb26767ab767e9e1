//! Exact sample of a three-colour field on a 40x40 pixel lattice.

use polyfield::dynamics::sample_exact;
use polyfield::geometry::build_uniform_lattice;
use polyfield::io::{mosaic_to_json, render_svg, SvgOptions};
use polyfield::model::{derive_params, log_weight};
use polyfield::mosaic::mosaic_to_pixels;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Arc::new(build_uniform_lattice(40, 40, 0.3)?);
    let p = derive_params(3, 0.5)?;
    let m = sample_exact(&t, &p, 17);
    let stats = m.analyze()?;
    println!(
        "{} cells, {} active segments, V/T/X vertices {}/{}/{}, log-weight {:.3}",
        t.num_cells(),
        m.active_count(),
        stats.n_v,
        stats.n_t,
        stats.n_x,
        log_weight(&m, &p)
    );

    let px = mosaic_to_pixels(&m)?;
    for r in 0..12 {
        let row: String = (0..40).map(|c| char::from(b'0' + px.get(r, c))).collect();
        println!("{row}");
    }

    let dir = std::env::temp_dir();
    std::fs::write(dir.join("sample_lattice.json"), mosaic_to_json(&m))?;
    std::fs::write(
        dir.join("sample_lattice.svg"),
        render_svg(&m, None, &SvgOptions::default())?,
    )?;
    println!("wrote {}", dir.join("sample_lattice.{json,svg}").display());
    Ok(())
}
