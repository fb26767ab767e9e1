//! Extracted edges drawn over the source image as SVG and PNG.

use polyfield::cli::rasterize;
use polyfield::extract::{extract_network, ExtractionConfig, PlantedGrid};
use polyfield::io::{render_svg, write_image, SvgOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let img = PlantedGrid {
        size: 96,
        lines: 3,
        ..Default::default()
    }
    .render(2)
    .scaled(255.0);
    let cfg = ExtractionConfig {
        sweeps: 150,
        ..Default::default()
    };
    let ex = extract_network(&img, &cfg, 2)?;

    let dir = std::env::temp_dir();
    let opts = SvgOptions {
        fill_faces: false,
        scale: 3.0,
        ..Default::default()
    };
    std::fs::write(
        dir.join("overlay.svg"),
        render_svg(&ex.mosaic, Some(&img), &opts)?,
    )?;
    write_image(&img, &dir.join("overlay_source.pgm"))?;
    rasterize(&ex.mosaic, 3.0).save(dir.join("overlay_faces.png"))?;
    println!(
        "{} active segments; wrote overlay.svg, overlay_source.pgm, overlay_faces.png to {}",
        ex.mosaic.active_count(),
        dir.display()
    );
    Ok(())
}
