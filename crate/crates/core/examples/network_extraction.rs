//! Recovering a planted line network from a noisy synthetic image.

use polyfield::extract::{active_pieces, edge_f1, extract_network, ExtractionConfig, PlantedGrid};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = PlantedGrid::default();
    let cfg = ExtractionConfig::default();
    // contrast on the 0..255 scale of an 8-bit image
    for contrast in [1.0, 255.0] {
        let img = grid.render(0).scaled(contrast);
        let start = Instant::now();
        let ex = extract_network(&img, &cfg, 0)?;
        let score = edge_f1(&active_pieces(&ex.mosaic), &grid.truth(), 2.0);
        println!(
            "contrast {contrast:>5}: {} lines, {} active segments, flux energy {:.1}, precision {:.2} recall {:.2} F1 {:.2} ({:.1}s)",
            ex.tessellation.num_lines(),
            ex.mosaic.active_count(),
            ex.energy,
            score.precision,
            score.recall,
            score.f1,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
