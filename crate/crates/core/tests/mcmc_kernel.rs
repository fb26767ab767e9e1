mod common;

use common::*;
use polyfield::geometry::{build_lattice, build_tessellation, Domain, Line};
use polyfield::model::{derive_params, SegmentModifier};
use std::sync::Arc;

fn check(t: &Arc<polyfield::geometry::Tessellation>, k: usize, alpha_v: f64, tau: f64) {
    let p = derive_params(k, alpha_v).unwrap();
    let law = augmented_law(t, &p);
    let states: Vec<Key> = law.keys().cloned().collect();
    let kernel = exact_kernel(t, &p, None, tau, &states);
    let (db, st) = balance_errors(&law, &kernel);
    assert!(
        db < 1e-12,
        "detailed balance violated by {db} (k={k}, alpha_v={alpha_v})"
    );
    assert!(
        st < 1e-12,
        "stationarity violated by {st} (k={k}, alpha_v={alpha_v})"
    );
}

#[test]
fn two_by_two_kernel_is_reversible() {
    let t = Arc::new(build_lattice(2, 2, &[0.5, 0.5]).unwrap());
    for (k, av) in [(3, 0.5), (2, 1.0), (4, 0.3), (3, 0.0), (2, 0.6)] {
        check(&t, k, av, 1.5);
    }
}

#[test]
fn three_by_two_kernel_is_reversible() {
    let t = Arc::new(build_lattice(3, 2, &[0.4, 0.7, 0.55]).unwrap());
    for (k, av) in [(3, 0.5), (2, 1.0)] {
        check(&t, k, av, 1.0);
    }
}

#[test]
fn oblique_tessellation_kernel_is_reversible() {
    let d = Domain::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
    let lines = vec![
        Line::new(0, 0.3, 1.0, 3.5, 0.5).unwrap(),
        Line::new(1, -0.4, 1.0, 4.0, 0.4).unwrap(),
        Line::new(2, 0.9, 0.2, 5.0, 0.6).unwrap(),
    ];
    let t = Arc::new(build_tessellation(lines, d).unwrap());
    check(&t, 3, 0.5, 1.0);
}

#[test]
fn modified_kernel_targets_reweighted_law() {
    let t = Arc::new(build_lattice(2, 2, &[0.5, 0.5]).unwrap());
    let p = derive_params(3, 0.5).unwrap();
    let h = SegmentModifier::uniform(&t, 1.0);
    let law = reweight(&t, p.k, &augmented_law(&t, &p), &h);
    let states: Vec<Key> = law.keys().cloned().collect();
    let kernel = exact_kernel(&t, &p, Some(&h), 2.0, &states);
    let (db, st) = balance_errors(&law, &kernel);
    assert!(db < 1e-12 && st < 1e-12, "db={db} st={st}");
}

mod random_parameters {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn kernel_is_reversible(k in 2usize..=4, alpha_v in 0.0f64..=1.0, pi_h in 0.05f64..0.95, pi_v in 0.05f64..0.95, tau in 0.1f64..5.0) {
            let t = Arc::new(build_lattice(2, 2, &[pi_h, pi_v]).unwrap());
            let p = derive_params(k, alpha_v).unwrap();
            let law = augmented_law(&t, &p);
            let states: Vec<Key> = law.keys().cloned().collect();
            let kernel = exact_kernel(&t, &p, None, tau, &states);
            let (db, st) = balance_errors(&law, &kernel);
            prop_assert!(db < 1e-12 && st < 1e-12, "db={} st={}", db, st);
        }
    }
}
