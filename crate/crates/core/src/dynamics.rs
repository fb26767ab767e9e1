//! Exact forward sampling by the time-ordered particle system.
//!
//! The sweep visits entry points and nodes chronologically. Each event only
//! sees the colours immediately before it: at an entry point the colour of
//! the cell being split, at a node the colours of the cells `before`,
//! `lower` and `upper` (see [`crate::geometry::Node`]). The event decides
//! the colour of the cell it creates, which fixes which outgoing segments
//! carry trajectories.

use crate::geometry::{CellId, Event, NodeId, Tessellation};
use crate::model::ModelParams;
use crate::mosaic::{Colour, Mosaic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("event {got} processed but event {expected} is next")]
    OutOfOrderEvent { expected: usize, got: usize },
    #[error("all events have been processed")]
    SweepFinished,
}

/// Source of the categorical draws made during a sweep.
pub trait DecisionSource {
    /// Index drawn with probability proportional to `weights`.
    fn categorical(&mut self, weights: &[f64]) -> usize;

    /// Called before the draws belonging to dynamic event `index`
    /// (`None` for the initial colour).
    fn begin_event(&mut self, _index: Option<usize>) {}
}

/// Seeded draws with one independent substream per event.
#[derive(Debug, Clone)]
pub struct RngSource {
    base: ChaCha8Rng,
    current: ChaCha8Rng,
}

impl RngSource {
    pub fn new(seed: u64) -> Self {
        let base = ChaCha8Rng::seed_from_u64(seed);
        RngSource {
            current: base.clone(),
            base,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.current.gen::<f64>()
    }
}

impl DecisionSource for RngSource {
    fn categorical(&mut self, weights: &[f64]) -> usize {
        sample_categorical(&mut self.current, weights)
    }

    fn begin_event(&mut self, index: Option<usize>) {
        self.current = self.base.clone();
        self.current.set_stream(index.map_or(0, |i| i as u64 + 1));
        self.current.set_word_pos(0);
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding left `u` at the top end: fall back to the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Replays a fixed choice sequence, recording the probability of the path.
///
/// [`enumerate_outcomes`] uses it to walk every branch of a randomised
/// procedure with exact probabilities.
#[derive(Debug, Clone, Default)]
pub struct Script {
    choices: Vec<usize>,
    /// Which options had positive weight at each visited position.
    options: Vec<Vec<bool>>,
    pos: usize,
    probability: f64,
}

impl Script {
    pub fn new(choices: Vec<usize>) -> Self {
        Script {
            choices,
            options: Vec::new(),
            pos: 0,
            probability: 1.0,
        }
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    fn restart(&mut self) {
        self.pos = 0;
        self.probability = 1.0;
        self.options.clear();
    }

    /// Moves to the next unexplored branch; false when all are done.
    fn advance(&mut self) -> bool {
        self.choices.truncate(self.options.len());
        while let Some(last) = self.choices.pop() {
            let options = &self.options[self.choices.len()];
            if let Some(next) = (last + 1..options.len()).find(|&j| options[j]) {
                self.choices.push(next);
                return true;
            }
        }
        false
    }
}

impl DecisionSource for Script {
    fn categorical(&mut self, weights: &[f64]) -> usize {
        if self.pos == self.choices.len() {
            // unexplored position: start from the first possible option
            self.choices
                .push(weights.iter().position(|&w| w > 0.0).unwrap_or(0));
        }
        let i = self.choices[self.pos];
        self.options
            .push(weights.iter().map(|&w| w > 0.0).collect());
        let total: f64 = weights.iter().sum();
        self.probability *= weights[i] / total;
        self.pos += 1;
        i
    }
}

/// Every outcome of `run` with its exact probability (zero-probability
/// branches are dropped).
pub fn enumerate_outcomes<T, F: FnMut(&mut Script) -> T>(mut run: F) -> Vec<(T, f64)> {
    let mut script = Script::new(Vec::new());
    let mut out = Vec::new();
    loop {
        script.restart();
        let value = run(&mut script);
        if script.probability > 0.0 {
            out.push((value, script.probability));
        }
        if !script.advance() {
            return out;
        }
    }
}

/// Uniform colour in `1..=k` different from `avoid`.
pub fn draw_colour_except(src: &mut dyn DecisionSource, k: Colour, avoid: Colour) -> Colour {
    let i = src.categorical(&vec![1.0; k as usize - 1]) as Colour + 1;
    if i >= avoid {
        i + 1
    } else {
        i
    }
}

/// Uniform colour in `1..=k` outside two distinct colours.
pub fn draw_colour_except_two(
    src: &mut dyn DecisionSource,
    k: Colour,
    a: Colour,
    b: Colour,
) -> Colour {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut c = src.categorical(&vec![1.0; k as usize - 2]) as Colour + 1;
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    c
}

/// Local situation at a node, read from the colours just before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCase {
    /// No trajectory arrives.
    Vacant,
    /// A trajectory arrives along the first line (`lines.0`) only.
    PathFirst,
    /// A trajectory arrives along the second line (`lines.1`) only.
    PathSecond,
    /// Two trajectories with equal colours outside them.
    CollisionSame,
    /// Two trajectories with different colours outside them.
    CollisionDifferent,
}

impl NodeCase {
    pub fn classify(before: Colour, lower: Colour, upper: Colour) -> Self {
        match (lower != before, upper != before) {
            (false, false) => NodeCase::Vacant,
            (true, false) => NodeCase::PathFirst,
            (false, true) => NodeCase::PathSecond,
            (true, true) if lower == upper => NodeCase::CollisionSame,
            (true, true) => NodeCase::CollisionDifferent,
        }
    }

    pub fn is_hit(self) -> bool {
        self != NodeCase::Vacant
    }
}

/// What happened at one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Boundary birth creating a region of the given colour.
    EntryBirth(Colour),
    EntryQuiet,
    /// Interior birth at a vacant node.
    Birth(Colour),
    NoBirth,
    Continue,
    Turn,
    Split(Colour),
    /// Both trajectories die.
    Die,
    /// Equal colours outside, both trajectories carry on with a new colour between.
    Cross(Colour),
    /// Different colours outside; only the trajectory on the first line survives.
    SurviveFirst,
    /// Different colours outside; only the trajectory on the second line survives.
    SurviveSecond,
    /// Different colours outside; both carry on with a new colour between.
    BothSurvive(Colour),
}

/// Path decision for a single trajectory with turning activity `pi_other`.
pub fn path_decision(src: &mut dyn DecisionSource, p: &ModelParams, pi_other: f64) -> PathChoice {
    let km1 = p.km1();
    let weights = [
        1.0 - p.epsilon * pi_other,
        p.alpha_v * pi_other / km1,
        (p.k as f64 - 2.0) * p.alpha_t * pi_other / km1,
    ];
    match src.categorical(&weights) {
        0 => PathChoice::Continue,
        1 => PathChoice::Turn,
        _ => PathChoice::Split,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathChoice {
    Continue,
    Turn,
    Split,
}

/// Colour of the cell created at a node, with the outcome that produced it.
///
/// `birth` is the interior birth indicator already drawn for the node; it is
/// only used when the node is vacant.
pub fn resolve_node(
    src: &mut dyn DecisionSource,
    p: &ModelParams,
    pis: (f64, f64),
    before: Colour,
    lower: Colour,
    upper: Colour,
    birth: bool,
) -> (Colour, Outcome) {
    let k = p.k;
    match NodeCase::classify(before, lower, upper) {
        NodeCase::Vacant => {
            if birth {
                let c = draw_colour_except(src, k, before);
                (c, Outcome::Birth(c))
            } else {
                (before, Outcome::NoBirth)
            }
        }
        NodeCase::PathFirst => match path_decision(src, p, pis.1) {
            PathChoice::Continue => (lower, Outcome::Continue),
            PathChoice::Turn => (upper, Outcome::Turn),
            PathChoice::Split => {
                let c = draw_colour_except_two(src, k, lower, upper);
                (c, Outcome::Split(c))
            }
        },
        NodeCase::PathSecond => match path_decision(src, p, pis.0) {
            PathChoice::Continue => (upper, Outcome::Continue),
            PathChoice::Turn => (lower, Outcome::Turn),
            PathChoice::Split => {
                let c = draw_colour_except_two(src, k, lower, upper);
                (c, Outcome::Split(c))
            }
        },
        NodeCase::CollisionSame => {
            if src.categorical(&[p.alpha_v, p.alpha_x]) == 0 {
                (lower, Outcome::Die)
            } else {
                let c = draw_colour_except(src, k, lower);
                (c, Outcome::Cross(c))
            }
        }
        NodeCase::CollisionDifferent => {
            let rest = 1.0 - 2.0 * p.alpha_t;
            match src.categorical(&[p.alpha_t, p.alpha_t, rest.max(0.0)]) {
                // the first line's trajectory carries on when `after` equals `lower`
                0 => (lower, Outcome::SurviveFirst),
                1 => (upper, Outcome::SurviveSecond),
                _ => {
                    let c = draw_colour_except_two(src, k, lower, upper);
                    (c, Outcome::BothSurvive(c))
                }
            }
        }
    }
}

/// Boundary birth decision: colour of the region entered by line `pi`.
pub fn resolve_entry(
    src: &mut dyn DecisionSource,
    k: Colour,
    pi: f64,
    old: Colour,
) -> (Colour, Outcome) {
    if src.categorical(&[1.0, pi]) == 1 {
        let c = draw_colour_except(src, k, old);
        (c, Outcome::EntryBirth(c))
    } else {
        (old, Outcome::EntryQuiet)
    }
}

/// Interior birth indicator at a node.
pub fn draw_birth(src: &mut dyn DecisionSource, p: &ModelParams, pis: (f64, f64)) -> bool {
    let b = p.node_birth_probability(pis.0, pis.1);
    src.categorical(&[1.0 - b, b]) == 1
}

/// One entry of the birth log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BirthRecord {
    pub event: Event,
    /// The birth indicator came up.
    pub attempted: bool,
    /// The birth happened (false for pre-empted attempts at hit nodes).
    pub realized: bool,
}

/// State of a sweep between two events.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub k: Colour,
    /// Colour of every cell created so far.
    pub colours: Vec<Option<Colour>>,
    /// Index of the next dynamic event.
    pub cursor: usize,
    pub birth_log: Vec<BirthRecord>,
    /// Per node: a birth was drawn there while trajectories hit it.
    pub discarded: Vec<bool>,
    pub outcomes: Vec<Outcome>,
}

impl SweepState {
    /// Fresh sweep with the initial colour already chosen.
    pub fn new(t: &Tessellation, k: Colour, initial: Colour) -> Self {
        let mut colours = vec![None; t.num_cells()];
        colours[0] = Some(initial);
        SweepState {
            k,
            colours,
            cursor: 0,
            birth_log: Vec::new(),
            discarded: vec![false; t.num_nodes()],
            outcomes: Vec::new(),
        }
    }

    fn colour(&self, c: CellId) -> Colour {
        self.colours[c].expect("cell coloured before use")
    }

    pub fn is_finished(&self, t: &Tessellation) -> bool {
        self.cursor == t.events().len()
    }

    pub fn into_mosaic(self, t: Arc<Tessellation>) -> Mosaic {
        let colours = self
            .colours
            .into_iter()
            .map(|c| c.expect("sweep complete"))
            .collect();
        Mosaic::from_cell_colours(t, self.k, colours).expect("sweep colours are in range")
    }
}

/// Applies the next chronological event.
pub fn node_update(
    state: &mut SweepState,
    t: &Tessellation,
    p: &ModelParams,
    event: Event,
    src: &mut dyn DecisionSource,
) -> Result<Outcome, DynamicsError> {
    let expected = state.cursor;
    let Some(&next) = t.events().get(expected) else {
        return Err(DynamicsError::SweepFinished);
    };
    if next != event {
        return Err(DynamicsError::OutOfOrderEvent {
            expected,
            got: t.event_index(event),
        });
    }
    src.begin_event(Some(expected));
    let outcome = match event {
        Event::Entry(l) => {
            let cr = t.crossings(l);
            let old = state.colour(cr.old_cell);
            let (c, outcome) = resolve_entry(src, state.k, t.line(l).activity, old);
            state.colours[cr.new_cell] = Some(c);
            state.birth_log.push(BirthRecord {
                event,
                attempted: matches!(outcome, Outcome::EntryBirth(_)),
                realized: matches!(outcome, Outcome::EntryBirth(_)),
            });
            outcome
        }
        Event::Node(n) => node_event(state, t, p, n, src),
    };
    state.cursor += 1;
    state.outcomes.push(outcome);
    Ok(outcome)
}

fn node_event(
    state: &mut SweepState,
    t: &Tessellation,
    p: &ModelParams,
    n: NodeId,
    src: &mut dyn DecisionSource,
) -> Outcome {
    let node = t.node(n);
    let pis = (t.line(node.lines.0).activity, t.line(node.lines.1).activity);
    let (before, lower, upper) = (
        state.colour(node.before),
        state.colour(node.lower),
        state.colour(node.upper),
    );
    let hit = NodeCase::classify(before, lower, upper).is_hit();
    let (after, outcome) = if hit {
        let r = resolve_node(src, p, pis, before, lower, upper, false);
        // a birth drawn here is pre-empted by the trajectories
        let birth = draw_birth(src, p, pis);
        state.discarded[n] = birth;
        state.birth_log.push(BirthRecord {
            event: Event::Node(n),
            attempted: birth,
            realized: false,
        });
        r
    } else {
        let birth = draw_birth(src, p, pis);
        state.birth_log.push(BirthRecord {
            event: Event::Node(n),
            attempted: birth,
            realized: birth,
        });
        resolve_node(src, p, pis, before, lower, upper, birth)
    };
    state.colours[node.after] = Some(after);
    outcome
}

/// Runs a complete sweep.
pub fn sweep(t: &Tessellation, p: &ModelParams, src: &mut dyn DecisionSource) -> SweepState {
    src.begin_event(None);
    let initial = src.categorical(&vec![1.0; p.k as usize]) as Colour + 1;
    let mut state = SweepState::new(t, p.k, initial);
    for &e in t.events() {
        node_update(&mut state, t, p, e, src).expect("events visited in order");
    }
    state
}

/// An exact draw together with the discarded birth sites.
#[derive(Debug, Clone)]
pub struct ExactSample {
    pub mosaic: Mosaic,
    pub discarded: Vec<bool>,
}

pub fn sample_exact_augmented(t: &Arc<Tessellation>, p: &ModelParams, seed: u64) -> ExactSample {
    let state = sweep(t, p, &mut RngSource::new(seed));
    let discarded = state.discarded.clone();
    ExactSample {
        mosaic: state.into_mosaic(t.clone()),
        discarded,
    }
}

/// Exact sample of the consistent field.
pub fn sample_exact(t: &Arc<Tessellation>, p: &ModelParams, seed: u64) -> Mosaic {
    sample_exact_augmented(t, p, seed).mosaic
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_uniform_lattice;
    use crate::model::{derive_params, log_partition_function, log_weight};
    use approx::assert_relative_eq;

    fn lattice(rows: usize, cols: usize) -> Arc<Tessellation> {
        Arc::new(build_uniform_lattice(rows, cols, 0.5).unwrap())
    }

    /// State just before the node of the 2x2 lattice, with given colours.
    fn before_node(t: &Tessellation, before: Colour, lower: Colour, upper: Colour) -> SweepState {
        let node = t.node(0);
        let mut s = SweepState::new(t, 3, before);
        s.colours[node.lower] = Some(lower);
        s.colours[node.upper] = Some(upper);
        s.cursor = 2;
        s
    }

    #[test]
    fn collision_with_equal_colours_dies() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        let mut s = before_node(&t, 1, 2, 2);
        let out =
            node_update(&mut s, &t, &p, Event::Node(0), &mut Script::new(vec![0, 0])).unwrap();
        assert_eq!(out, Outcome::Die);
        assert_eq!(s.colours[t.node(0).after], Some(2));
        let m = s.into_mosaic(t.clone());
        assert!(m.is_admissible());
        assert_eq!(m.node_degree(0), 2);
    }

    #[test]
    fn path_split_picks_third_colour() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        let mut s = before_node(&t, 1, 2, 1);
        let out = node_update(
            &mut s,
            &t,
            &p,
            Event::Node(0),
            &mut Script::new(vec![2, 0, 0]),
        )
        .unwrap();
        assert_eq!(out, Outcome::Split(3));
        let m = s.into_mosaic(t.clone());
        assert_eq!(m.node_degree(0), 3);
    }

    #[test]
    fn vacant_node_without_birth() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        let mut s = before_node(&t, 2, 2, 2);
        let colours = s.colours.clone();
        let out = node_update(&mut s, &t, &p, Event::Node(0), &mut Script::new(vec![0])).unwrap();
        assert_eq!(out, Outcome::NoBirth);
        assert_eq!(
            s.birth_log,
            vec![BirthRecord {
                event: Event::Node(0),
                attempted: false,
                realized: false
            }]
        );
        assert_eq!(s.colours[t.node(0).after], Some(2));
        assert_eq!(&s.colours[..3], &colours[..3]);
    }

    #[test]
    fn out_of_order_events_are_rejected() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        let mut s = SweepState::new(&t, 3, 1);
        let err = node_update(&mut s, &t, &p, Event::Node(0), &mut RngSource::new(1)).unwrap_err();
        assert_eq!(
            err,
            DynamicsError::OutOfOrderEvent {
                expected: 0,
                got: 2
            }
        );
    }

    #[test]
    fn sweep_law_is_exact_on_two_by_two() {
        let t = lattice(2, 2);
        for (k, av) in [(3usize, 0.5), (2, 1.0), (4, 0.0), (3, 1.0)] {
            let p = derive_params(k, av).unwrap();
            let lz = log_partition_function(&t, &p);
            let mut law = std::collections::HashMap::new();
            for (colours, prob) in enumerate_outcomes(|s| {
                let st = sweep(&t, &p, s);
                st.into_mosaic(t.clone()).colours().to_vec()
            }) {
                *law.entry(colours).or_insert(0.0) += prob;
            }
            let total: f64 = law.values().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            for (colours, prob) in law {
                let m = Mosaic::from_cell_colours(t.clone(), p.k, colours).unwrap();
                assert_relative_eq!(prob, (log_weight(&m, &p) - lz).exp(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn determinism() {
        let t = lattice(6, 5);
        let p = derive_params(3, 0.5).unwrap();
        assert_eq!(sample_exact(&t, &p, 11), sample_exact(&t, &p, 11));
        assert_ne!(
            sample_exact(&t, &p, 11).colours(),
            sample_exact(&t, &p, 12).colours()
        );
    }

    #[test]
    fn script_enumerates_branches() {
        let outcomes = enumerate_outcomes(|s| {
            let a = s.categorical(&[1.0, 3.0]);
            let b = if a == 1 {
                s.categorical(&[1.0, 1.0])
            } else {
                0
            };
            (a, b)
        });
        assert_eq!(
            outcomes,
            vec![((0, 0), 0.25), ((1, 0), 0.375), ((1, 1), 0.375)]
        );
    }

    #[test]
    fn colour_draws_avoid_exclusions() {
        for choice in 0..3 {
            let c = draw_colour_except(&mut Script::new(vec![choice]), 4, 2);
            assert_ne!(c, 2);
            let c = draw_colour_except_two(&mut Script::new(vec![choice.min(1)]), 4, 3, 1);
            assert!(c == 2 || c == 4);
        }
    }
}
