#![allow(dead_code)]

use polyfield::dynamics::{enumerate_outcomes, sweep};
use polyfield::geometry::Tessellation;
use polyfield::mcmc::{
    apply_flip, mh_acceptance, recolour_proposal, site_rates, ChainState, FlipKind,
};
use polyfield::model::{log_weight, GibbsModifier, ModelParams};
use polyfield::mosaic::{Colour, Mosaic};
use std::collections::HashMap;
use std::sync::Arc;

pub type Key = (Vec<Colour>, Vec<bool>);

pub fn key(s: &ChainState) -> Key {
    (s.mosaic.colours().to_vec(), s.discarded.clone())
}

/// Law of (configuration, discarded sites) under the exact sweep.
pub fn augmented_law(t: &Arc<Tessellation>, p: &ModelParams) -> HashMap<Key, f64> {
    let mut law = HashMap::new();
    for ((colours, discarded), prob) in enumerate_outcomes(|s| {
        let st = sweep(t, p, s);
        let d = st.discarded.clone();
        (st.into_mosaic(t.clone()).colours().to_vec(), d)
    }) {
        *law.entry((colours, discarded)).or_insert(0.0) += prob;
    }
    law
}

pub fn state_of(t: &Arc<Tessellation>, k: Colour, key: &Key) -> ChainState {
    let m = Mosaic::from_cell_colours(t.clone(), k, key.0.clone()).unwrap();
    ChainState {
        mosaic: m,
        discarded: key.1.clone(),
        clock: 0.0,
    }
}

/// One-step kernel of the uniformised chain, built by enumerating every
/// random branch of every proposal.
pub fn exact_kernel(
    t: &Arc<Tessellation>,
    p: &ModelParams,
    modifier: Option<&dyn GibbsModifier>,
    tau: f64,
    states: &[Key],
) -> HashMap<Key, HashMap<Key, f64>> {
    let sites = ChainState::sites(t);
    let rates: Vec<f64> = sites.iter().map(|&s| site_rates(s, p, t).0).collect();
    let bound = rates.iter().copied().fold(1.0, f64::max);
    let lambda = tau + sites.len() as f64 * bound;
    let h = |m: &Mosaic| modifier.map_or(0.0, |h| h.evaluate(m));
    let mut kernel = HashMap::new();
    for x in states {
        let sx = state_of(t, p.k, x);
        let lw = log_weight(&sx.mosaic, p);
        let hx = h(&sx.mosaic);
        let mut row: HashMap<Key, f64> = HashMap::new();
        let mut moved = 0.0;
        let ncells = t.num_cells();
        for cell in 0..ncells {
            for colour in 1..=p.k {
                let w = tau / lambda / (ncells as f64 * p.k as f64);
                for (y, q) in
                    enumerate_outcomes(|s| recolour_proposal(&sx, cell, colour, p, s).state)
                {
                    let acc = (log_weight(&y.mosaic, p) - lw).exp().min(1.0)
                        * mh_acceptance(h(&y.mosaic) - hx);
                    let ky = key(&y);
                    if ky != *x {
                        *row.entry(ky).or_insert(0.0) += w * q * acc;
                        moved += w * q * acc;
                    }
                }
            }
        }
        for (i, &site) in sites.iter().enumerate() {
            let occupied = sx.occupied(site);
            let rate = if occupied { 1.0 } else { rates[i] };
            let kind = if occupied {
                FlipKind::Death
            } else {
                FlipKind::Birth
            };
            let w = bound / lambda * (rate / bound);
            for (y, q) in enumerate_outcomes(|s| apply_flip(&sx, site, kind, p, s).unwrap().state) {
                let acc = mh_acceptance(h(&y.mosaic) - hx);
                let ky = key(&y);
                if ky != *x {
                    *row.entry(ky).or_insert(0.0) += w * q * acc;
                    moved += w * q * acc;
                }
            }
        }
        row.insert(x.clone(), 1.0 - moved);
        kernel.insert(x.clone(), row);
    }
    kernel
}

/// Largest violation of detailed balance and of stationarity.
pub fn balance_errors(
    law: &HashMap<Key, f64>,
    kernel: &HashMap<Key, HashMap<Key, f64>>,
) -> (f64, f64) {
    let mut db = 0.0f64;
    let mut flow: HashMap<Key, f64> = HashMap::new();
    for (x, row) in kernel {
        let px = law[x];
        for (y, &k) in row {
            *flow.entry(y.clone()).or_insert(0.0) += px * k;
            if x != y {
                let back = kernel.get(y).and_then(|r| r.get(x)).copied().unwrap_or(0.0);
                let py = law.get(y).copied().unwrap_or(0.0);
                db = db.max((px * k - py * back).abs());
            }
        }
    }
    let mut st = 0.0f64;
    for (y, &py) in law {
        st = st.max((flow.get(y).copied().unwrap_or(0.0) - py).abs());
    }
    (db, st)
}

/// Law reweighted by `exp(-H)`.
pub fn reweight(
    t: &Arc<Tessellation>,
    k: Colour,
    law: &HashMap<Key, f64>,
    h: &dyn GibbsModifier,
) -> HashMap<Key, f64> {
    let mut out: HashMap<Key, f64> = law
        .iter()
        .map(|(x, &p)| {
            (
                x.clone(),
                p * (-h.evaluate(&state_of(t, k, x).mosaic)).exp(),
            )
        })
        .collect();
    let z: f64 = out.values().sum();
    for v in out.values_mut() {
        *v /= z;
    }
    out
}
