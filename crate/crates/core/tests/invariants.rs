use polyfield::dynamics::sample_exact;
use polyfield::geometry::{
    build_lattice, build_tessellation, polygon_area, Domain, Line, Tessellation,
};
use polyfield::io::{mosaic_from_json, mosaic_to_json};
use polyfield::model::{derive_params, log_weight, LocalEnergy};
use polyfield::mosaic::{mosaic_to_pixels, pixels_to_mosaic, Mosaic, PixelArray};
use proptest::prelude::*;
use std::sync::Arc;

const SIDE: f64 = 10.0;

fn random_lines() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec(
        (0.0..std::f64::consts::PI, 0.5..9.5f64, 0.05..0.95f64),
        1..7,
    )
}

/// Lines through random interior points with random directions.
fn tessellation_from(family: &[(f64, f64, f64)], seed_y: f64) -> Option<Tessellation> {
    let domain = Domain::rectangle(0.0, 0.0, SIDE, SIDE).unwrap();
    let lines: Vec<Line> = family
        .iter()
        .enumerate()
        .map(|(i, &(theta, x, pi))| {
            let y = (x * 7.3 + seed_y + i as f64 * 3.1).rem_euclid(9.0) + 0.5;
            let (a, b) = (theta.cos(), theta.sin());
            Line::new(i, a, b, a * x + b * y, pi).unwrap()
        })
        .collect();
    build_tessellation(lines, domain).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cells_partition_the_domain(family in random_lines(), sy in 0.0..9.0f64) {
        let Some(t) = tessellation_from(&family, sy) else { return Ok(()) };
        let area: f64 = t.cells().iter().map(|c| polygon_area(&c.polygon)).sum();
        prop_assert!((area - SIDE * SIDE).abs() < 1e-9, "area {area}");
        prop_assert_eq!(t.num_cells(), 1 + t.num_lines() + t.num_nodes());
        for (s, seg) in t.segments().iter().enumerate() {
            prop_assert_ne!(seg.below, seg.above, "segment {} borders one cell twice", s);
            prop_assert!(seg.length() > 0.0);
        }
        for l in 0..t.num_lines() {
            let crossings = t.nodes().iter().filter(|n| n.lines.0 == l || n.lines.1 == l).count();
            prop_assert_eq!(t.line_segments(l).len(), crossings + 1);
        }
    }

    #[test]
    fn exact_samples_are_admissible(family in random_lines(), sy in 0.0..9.0f64, k in 2usize..5, a in 0.0..=1.0f64, seed in any::<u64>()) {
        let Some(t) = tessellation_from(&family, sy) else { return Ok(()) };
        let p = derive_params(k, a).unwrap();
        let m = sample_exact(&Arc::new(t), &p, seed);
        prop_assert!(m.is_admissible(), "{:?}", m.validate());
        prop_assert!(log_weight(&m, &p).is_finite());
    }

    #[test]
    fn pixel_duality_round_trips(rows in 1usize..6, cols in 1usize..6, k in 2u8..5, raw in prop::collection::vec(any::<u8>(), 25)) {
        let t = Arc::new(build_lattice(rows, cols, &vec![0.5; rows + cols - 2]).unwrap());
        let data: Vec<u8> = raw[..rows * cols].iter().map(|v| v % k + 1).collect();
        let px = PixelArray::new(rows, cols, data);
        let m = pixels_to_mosaic(&px, t, k).unwrap();
        prop_assert_eq!(mosaic_to_pixels(&m).unwrap(), px);
        let json = mosaic_to_json(&m);
        let back = mosaic_from_json(&json).unwrap();
        prop_assert_eq!(back.colours(), m.colours());
        prop_assert_eq!(back.active(), m.active());
        prop_assert_eq!(mosaic_to_json(&back), json);
    }

    #[test]
    fn weight_is_colour_permutation_invariant(
        rows in 2usize..4, cols in 2usize..4, a in 0.0..=1.0f64, seed in any::<u64>(), shift in 1u8..3,
    ) {
        let t = Arc::new(build_lattice(rows, cols, &vec![0.4; rows + cols - 2]).unwrap());
        let p = derive_params(3, a).unwrap();
        let m = sample_exact(&t, &p, seed);
        let permuted: Vec<u8> = m.colours().iter().map(|&c| (c - 1 + shift) % 3 + 1).collect();
        let q = Mosaic::from_cell_colours(t, 3, permuted).unwrap();
        prop_assert_eq!(q.active(), m.active());
        prop_assert!((log_weight(&q, &p) - log_weight(&m, &p)).abs() < 1e-12);
    }

    #[test]
    fn local_energy_matches_global_weight(family in random_lines(), sy in 0.0..9.0f64, k in 2usize..5, a in 0.0..=1.0f64, s1 in any::<u64>(), s2 in any::<u64>()) {
        let Some(t) = tessellation_from(&family, sy) else { return Ok(()) };
        let t = Arc::new(t);
        let p = derive_params(k, a).unwrap();
        let local = LocalEnergy::new(t.clone(), &p);
        let (m1, m2) = (sample_exact(&t, &p, s1), sample_exact(&t, &p, s2));
        let global = log_weight(&m2, &p) - log_weight(&m1, &p);
        let by_parts = local.total(&m2) - local.total(&m1);
        prop_assert!((global - by_parts).abs() < 1e-9, "{global} vs {by_parts}");
    }
}

#[test]
fn two_colour_field_has_no_t_vertices() {
    let t = Arc::new(build_lattice(5, 5, &[0.3, 0.5, 0.7, 0.4, 0.6, 0.5, 0.45, 0.55]).unwrap());
    for a in [0.0, 0.5, 1.0] {
        let p = derive_params(2, a).unwrap();
        for seed in 0..2000 {
            assert_eq!(sample_exact(&t, &p, seed).analyze().unwrap().n_t, 0);
        }
    }
}
