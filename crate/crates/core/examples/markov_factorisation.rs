//! Lattice probabilities as a product of local conditionals, and marginals
//! of sub-rectangles matching the smaller field.

use polyfield::model::derive_params;
use polyfield::oracle::{enumerate_lattice, factorisation_check, factorised_probability, marginal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = derive_params(3, 0.25)?;
    let acts = [0.3, 0.7, 0.45, 0.6];
    let err = factorisation_check(3, 3, &acts, &p)?;
    println!("3x3 product of conditionals vs joint law: max abs error {err:.2e}");

    let full = enumerate_lattice(3, 3, &acts, &p, None)?;
    let i = (0..full.len())
        .max_by(|&a, &b| full.probabilities[a].total_cmp(&full.probabilities[b]))
        .unwrap();
    let px = full.pixels(i).unwrap();
    println!(
        "mode {} p = {:.6}, factorised {:.6}",
        px.to_code(),
        full.probabilities[i],
        factorised_probability(&px, &acts, &p)
    );

    // the top-left 2x2 window only sees the first horizontal and first vertical line
    let m = marginal(&full, 0, 0, 2, 2)?;
    let direct = enumerate_lattice(2, 2, &[acts[0], acts[2]], &p, None)?;
    let worst = m
        .probabilities
        .iter()
        .zip(&direct.probabilities)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("2x2 marginal vs directly built 2x2 field: max abs error {worst:.2e}");
    Ok(())
}
