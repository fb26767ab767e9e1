//! Birth-death-recolour chain converging to the exact law on a 2x2 lattice.

use polyfield::geometry::build_uniform_lattice;
use polyfield::mcmc::{Chain, ChainState};
use polyfield::model::derive_params;
use polyfield::mosaic::Mosaic;
use polyfield::oracle::{enumerate_exact, tv_distance};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Arc::new(build_uniform_lattice(2, 2, 0.5)?);
    let p = derive_params(3, 0.5)?;
    let exact = enumerate_exact(t.clone(), &p, None)?;
    let mut chain = Chain::new(
        ChainState::new(Mosaic::monochrome(t, 3, 1)?),
        p,
        None,
        1.0,
        5,
    )?;

    let mut counts = vec![0u64; exact.len()];
    let mut accepted = 0u64;
    let mut n = 0u64;
    for checkpoint in [1_000u64, 10_000, 100_000, 1_000_000] {
        while n < checkpoint {
            accepted += chain.step().accepted as u64;
            counts[exact.index_of(&chain.state().mosaic)] += 1;
            n += 1;
        }
        let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        println!(
            "{n:>8} events  clock {:>10.1}  acceptance {:.3}  TV {:.4}",
            chain.state().clock,
            accepted as f64 / n as f64,
            tv_distance(&emp, &exact.probabilities)?
        );
    }
    Ok(())
}
