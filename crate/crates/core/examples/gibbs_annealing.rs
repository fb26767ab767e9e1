//! Annealing a segment-wise modifier that rewards a planted cross.

use polyfield::geometry::build_uniform_lattice;
use polyfield::io::write_trace;
use polyfield::mcmc::{anneal, AnnealSchedule, ChainState};
use polyfield::model::{derive_params, SegmentModifier};
use polyfield::mosaic::Mosaic;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (rows, cols) = (12, 12);
    let t = Arc::new(build_uniform_lattice(rows, cols, 0.5)?);
    let lat = t.lattice().unwrap();
    let target = [lat.horizontal_line(5), lat.vertical_line(3)];
    let weights: Vec<f64> = t
        .segments()
        .iter()
        .map(|s| if target.contains(&s.line) { -1.0 } else { 1.0 })
        .collect();
    let h = SegmentModifier::new(weights);

    let p = derive_params(3, 0.5)?;
    let schedule = AnnealSchedule::geometric(0.1, 50.0, 300)?;
    let start = ChainState::new(Mosaic::monochrome(t.clone(), 3, 1)?);
    let res = anneal(start, &p, &h, &schedule, 20.0, 3)?;

    let on_target = t
        .segments()
        .iter()
        .zip(res.best.active())
        .filter(|(s, &a)| a && target.contains(&s.line))
        .count();
    let wanted = target
        .iter()
        .map(|&l| t.line_segments(l).len())
        .sum::<usize>();
    println!(
        "best energy {:.1}: {on_target}/{wanted} planted segments active, {} others",
        res.best_energy,
        res.best.active_count() - on_target
    );
    for row in res.trace.iter().step_by(50) {
        println!(
            "sweep {:>3}  beta {:>7.3}  energy {:>6.1}  best {:>6.1}",
            row.sweep, row.beta, row.energy, row.best
        );
    }
    write_trace(
        std::fs::File::create(std::env::temp_dir().join("gibbs_annealing.csv"))?,
        &res.trace,
    )?;
    Ok(())
}
