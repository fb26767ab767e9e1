//! Brute-force enumeration against the closed-form partition function.

use polyfield::model::derive_params;
use polyfield::oracle::enumerate_lattice;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (k, alpha_v) in [(2, 1.0), (3, 0.5), (4, 0.0)] {
        let p = derive_params(k, alpha_v)?;
        let t = enumerate_lattice(2, 3, &[0.5, 0.3, 0.7], &p, None)?;
        let closed = t.z_closed.unwrap();
        println!(
            "k={k} alpha_v={alpha_v}: {} states, Z = {:.12} (closed form {:.12}), sum p = {:.15}",
            t.len(),
            t.z,
            closed,
            t.sum_probabilities()
        );
    }

    let p = derive_params(3, 0.5)?;
    let t = enumerate_lattice(2, 2, &[0.5, 0.5], &p, None)?;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t.probabilities[b].total_cmp(&t.probabilities[a]));
    println!("2x2, k=3: Z = {}", t.z);
    for &i in order.iter().take(5) {
        println!(
            "  {}  p = {:.6}",
            t.pixels(i).unwrap().to_code(),
            t.probabilities[i]
        );
    }
    Ok(())
}
