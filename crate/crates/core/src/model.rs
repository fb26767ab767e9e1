//! Consistent-field parameters, the Hamiltonian, weights and the closed-form
//! partition function.
//!
//! All weights live in log space. A forbidden configuration has Hamiltonian
//! `f64::INFINITY` and log-weight `f64::NEG_INFINITY`.

use crate::geometry::{LineId, NodeId, SegmentEnd, SegmentId, Tessellation};
use crate::mosaic::{Colour, Mosaic, NodeShape, VertexKind};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("need k >= 2 colours, got {0}")]
    BadColourCount(usize),
    #[error("alpha_v = {0} is outside [0, 1]")]
    BadAlphaV(f64),
    #[error("{states} states exceed the enumeration cap {cap}")]
    EnumerationTooLarge { states: f64, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub k: Colour,
    pub alpha_v: f64,
    pub alpha_x: f64,
    pub alpha_t: f64,
    pub epsilon: f64,
}

pub fn derive_params(k: usize, alpha_v: f64) -> Result<ModelParams, ModelError> {
    if !(2..=255).contains(&k) {
        return Err(ModelError::BadColourCount(k));
    }
    if !(0.0..=1.0).contains(&alpha_v) {
        return Err(ModelError::BadAlphaV(alpha_v));
    }
    let km1 = (k - 1) as f64;
    let km2 = (k - 2) as f64;
    let alpha_x = 1.0 - alpha_v;
    let alpha_t = (1.0 - alpha_x * km2 / km1) / 2.0;
    let epsilon = alpha_v / km1 + alpha_t * km2 / km1;
    Ok(ModelParams {
        k: k as Colour,
        alpha_v,
        alpha_x,
        alpha_t,
        epsilon,
    })
}

impl ModelParams {
    pub fn km1(&self) -> f64 {
        (self.k - 1) as f64
    }

    /// Probability of an interior birth at a node with the given activities.
    pub fn node_birth_probability(&self, pi1: f64, pi2: f64) -> f64 {
        self.alpha_v * pi1 * pi2 / self.km1()
    }
}

/// `-count * ln(coef)` with `0 * inf = 0`.
fn weighted_neg_log(count: usize, coef: f64) -> f64 {
    if count == 0 {
        0.0
    } else if coef <= 0.0 {
        f64::INFINITY
    } else {
        -(count as f64) * coef.ln()
    }
}

/// The Hamiltonian of the consistent field, evaluated from the vertex,
/// edge and node statistics. Inadmissible configurations get `+∞`.
pub fn hamiltonian_phi(m: &Mosaic, p: &ModelParams) -> f64 {
    let Ok(stats) = m.analyze() else {
        return f64::INFINITY;
    };
    let t = m.tessellation();
    let km1 = p.km1();
    let mut phi = weighted_neg_log(stats.n_v, p.alpha_v)
        + weighted_neg_log(stats.n_t, km1 * p.alpha_t)
        + weighted_neg_log(stats.n_x, km1 * p.alpha_x)
        + stats.edges.len() as f64 * km1.ln();
    for (edge, crossings) in stats.edges.iter().zip(&stats.edge_crossings) {
        for &n in crossings {
            let other = other_line(t, n, edge.line);
            phi -= (1.0 - p.epsilon * t.line(other).activity).ln();
        }
    }
    for &n in &stats.nodes_on_gamma {
        phi += (1.0 - node_birth_prob(t, p, n)).ln();
    }
    phi
}

/// `ln Π π_l` over the primary edges.
pub fn log_primary_activity(m: &Mosaic) -> f64 {
    let t = m.tessellation();
    let mut total = 0.0;
    for l in 0..t.num_lines() {
        let mut prev = false;
        for &s in t.line_segments(l) {
            let a = m.is_active(s);
            if a && !prev {
                total += t.line(l).activity.ln();
            }
            prev = a;
        }
    }
    total
}

/// Unnormalised log-weight `-Φ + ln Π π`.
pub fn log_weight(m: &Mosaic, p: &ModelParams) -> f64 {
    let phi = hamiltonian_phi(m, p);
    if phi.is_infinite() {
        return f64::NEG_INFINITY;
    }
    -phi + log_primary_activity(m)
}

pub fn log_partition_function(t: &Tessellation, p: &ModelParams) -> f64 {
    let mut z = (p.k as f64).ln();
    for l in t.lines() {
        z += l.activity.ln_1p();
    }
    for n in 0..t.num_nodes() {
        z -= (-node_birth_prob(t, p, n)).ln_1p();
    }
    z
}

pub fn partition_function(t: &Tessellation, p: &ModelParams) -> f64 {
    log_partition_function(t, p).exp()
}

/// Normalised probability. With a modifier the normaliser is obtained by
/// exhaustive enumeration, capped at `cap` states.
pub fn probability(
    m: &Mosaic,
    p: &ModelParams,
    modifier: Option<&dyn GibbsModifier>,
    cap: usize,
) -> Result<f64, ModelError> {
    match modifier {
        None => Ok((log_weight(m, p) - log_partition_function(m.tessellation(), p)).exp()),
        Some(h) => {
            let table = crate::oracle::enumerate_exact_with_cap(
                m.tessellation_arc().clone(),
                p,
                Some(h),
                cap,
            )
            .map_err(|e| match e {
                crate::oracle::OracleError::EnumerationTooLarge { states, cap } => {
                    ModelError::EnumerationTooLarge { states, cap }
                }
                other => panic!("unexpected oracle failure: {other}"),
            })?;
            let lw = log_weight(m, p) - h.evaluate(m);
            Ok((lw - table.z.ln()).exp())
        }
    }
}

fn node_birth_prob(t: &Tessellation, p: &ModelParams, n: NodeId) -> f64 {
    let (a, b) = t.node(n).lines;
    p.node_birth_probability(t.line(a).activity, t.line(b).activity)
}

fn other_line(t: &Tessellation, n: NodeId, l: LineId) -> LineId {
    let (a, b) = t.node(n).lines;
    if a == l {
        b
    } else {
        a
    }
}

/// Extra energy term `H` added to `Φ`.
pub trait GibbsModifier: Send + Sync {
    fn evaluate(&self, m: &Mosaic) -> f64;

    /// Per-segment energies when `H` is a sum over active segments.
    fn segment_weights(&self) -> Option<&[f64]> {
        None
    }
}

/// `H = Σ w_s` over active segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentModifier {
    weights: Vec<f64>,
}

impl SegmentModifier {
    pub fn new(weights: Vec<f64>) -> Self {
        SegmentModifier { weights }
    }

    /// The same cost on every segment.
    pub fn uniform(t: &Tessellation, cost: f64) -> Self {
        SegmentModifier {
            weights: vec![cost; t.num_segments()],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SegmentModifier {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

impl GibbsModifier for SegmentModifier {
    fn evaluate(&self, m: &Mosaic) -> f64 {
        self.weights
            .iter()
            .zip(m.active())
            .filter(|(_, &a)| a)
            .map(|(w, _)| w)
            .sum()
    }

    fn segment_weights(&self) -> Option<&[f64]> {
        Some(&self.weights)
    }
}

/// Energy difference of a modifier between two configurations that differ
/// on `changed` segments (falls back to full evaluation when needed).
pub fn modifier_delta(
    h: &dyn GibbsModifier,
    old: &Mosaic,
    new: &Mosaic,
    changed: &[SegmentId],
) -> f64 {
    match h.segment_weights() {
        Some(w) => changed
            .iter()
            .map(|&s| match (old.is_active(s), new.is_active(s)) {
                (false, true) => w[s],
                (true, false) => -w[s],
                _ => 0.0,
            })
            .sum(),
        None => h.evaluate(new) - h.evaluate(old),
    }
}

/// Node-local decomposition of the log-weight, used for incremental updates.
///
/// The log-weight splits into one term per node (vertex kind, pass-through
/// crossing, primary-edge starts at the node) and one term per line (the
/// boundary ends of its first and last segment).
#[derive(Debug, Clone)]
pub struct LocalEnergy {
    tess: Arc<Tessellation>,
    node_through: Vec<[f64; 2]>,
    node_v: Vec<f64>,
    node_t: Vec<f64>,
    node_x: Vec<f64>,
    ln_pi: Vec<f64>,
    half_ln_km1: f64,
}

impl LocalEnergy {
    pub fn new(tess: Arc<Tessellation>, p: &ModelParams) -> Self {
        let km1 = p.km1();
        let ln_km1 = km1.ln();
        let neg_inf_ln = |x: f64| if x <= 0.0 { f64::NEG_INFINITY } else { x.ln() };
        let mut node_through = Vec::with_capacity(tess.num_nodes());
        let mut node_v = Vec::new();
        let mut node_t = Vec::new();
        let mut node_x = Vec::new();
        for n in 0..tess.num_nodes() {
            let (a, b) = tess.node(n).lines;
            let (pa, pb) = (tess.line(a).activity, tess.line(b).activity);
            let ln_free = (-p.node_birth_probability(pa, pb)).ln_1p();
            // line `a` passes through, so line `b` is the crossing one and vice versa
            node_through.push([
                (1.0 - p.epsilon * pb).ln() - ln_free,
                (1.0 - p.epsilon * pa).ln() - ln_free,
            ]);
            node_v.push(neg_inf_ln(p.alpha_v) - ln_km1 - ln_free);
            node_t.push(neg_inf_ln(km1 * p.alpha_t) - 1.5 * ln_km1 - ln_free);
            node_x.push(neg_inf_ln(km1 * p.alpha_x) - 2.0 * ln_km1 - ln_free);
        }
        let ln_pi = tess.lines().iter().map(|l| l.activity.ln()).collect();
        LocalEnergy {
            tess,
            node_through,
            node_v,
            node_t,
            node_x,
            ln_pi,
            half_ln_km1: 0.5 * ln_km1,
        }
    }

    pub fn node_term(&self, m: &Mosaic, n: NodeId) -> f64 {
        let (base, starts) = self.node_parts(m, n);
        base + starts
    }

    /// Node term split into its Hamiltonian part and its primary-edge part.
    fn node_parts(&self, m: &Mosaic, n: NodeId) -> (f64, f64) {
        let node = self.tess.node(n);
        let base = match m.node_shape(n) {
            NodeShape::Empty => 0.0,
            NodeShape::Through(l) => self.node_through[n][if l == node.lines.0 { 0 } else { 1 }],
            NodeShape::Vertex(VertexKind::V) => self.node_v[n],
            NodeShape::Vertex(VertexKind::T) => self.node_t[n],
            NodeShape::Vertex(VertexKind::X) => self.node_x[n],
            NodeShape::Dangling => f64::NEG_INFINITY,
        };
        let mut starts = 0.0;
        if m.is_active(node.out_above) && !m.is_active(node.in_below) {
            starts += self.ln_pi[node.lines.0];
        }
        if m.is_active(node.out_below) && !m.is_active(node.in_above) {
            starts += self.ln_pi[node.lines.1];
        }
        (base, starts)
    }

    pub fn line_term(&self, m: &Mosaic, l: LineId) -> f64 {
        let (base, starts) = self.line_parts(m, l);
        base + starts
    }

    fn line_parts(&self, m: &Mosaic, l: LineId) -> (f64, f64) {
        let segs = self.tess.line_segments(l);
        let (mut base, mut starts) = (0.0, 0.0);
        if m.is_active(segs[0]) {
            base -= self.half_ln_km1;
            starts += self.ln_pi[l];
        }
        if m.is_active(segs[segs.len() - 1]) {
            base -= self.half_ln_km1;
        }
        (base, starts)
    }

    /// Log-weight of an admissible configuration.
    pub fn total(&self, m: &Mosaic) -> f64 {
        let nodes: f64 = (0..self.tess.num_nodes())
            .map(|n| self.node_term(m, n))
            .sum();
        let lines: f64 = (0..self.tess.num_lines())
            .map(|l| self.line_term(m, l))
            .sum();
        nodes + lines
    }

    /// Log-weight difference `new - old` given the segments whose flag changed.
    pub fn delta(&self, old: &Mosaic, new: &Mosaic, changed: &[SegmentId]) -> f64 {
        self.delta_parts(old, new, changed).0
    }

    /// Log-weight difference and the part of it due to primary-edge activities.
    pub fn delta_parts(&self, old: &Mosaic, new: &Mosaic, changed: &[SegmentId]) -> (f64, f64) {
        let mut nodes: Vec<NodeId> = Vec::with_capacity(changed.len() * 2);
        let mut lines: Vec<LineId> = Vec::new();
        for &s in changed {
            let seg = self.tess.segment(s);
            for end in [seg.tail, seg.head] {
                match end {
                    SegmentEnd::Node(n) => nodes.push(n),
                    SegmentEnd::Boundary => lines.push(seg.line),
                }
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        lines.sort_unstable();
        lines.dedup();
        let (mut d, mut dpi) = (0.0, 0.0);
        for &n in &nodes {
            let (nb, ns) = self.node_parts(new, n);
            let (ob, os) = self.node_parts(old, n);
            d += diff(nb + ns, ob + os);
            dpi += ns - os;
        }
        for &l in &lines {
            let (nb, ns) = self.line_parts(new, l);
            let (ob, os) = self.line_parts(old, l);
            d += diff(nb + ns, ob + os);
            dpi += ns - os;
        }
        (d, dpi)
    }
}

/// `a - b` on the extended reals, with `-∞ - -∞ = 0`.
fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}
