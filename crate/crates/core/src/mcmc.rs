//! Birth-death-recolour dynamics, Metropolis-Hastings modification and
//! simulated annealing.
//!
//! The chain runs on configurations augmented with the discarded birth sites.
//! Every entry point and node is a birth site. A site is *occupied* when its
//! birth indicator is set: a realised boundary or interior birth, or a birth
//! drawn at a node that trajectories already hit (a discarded birth).
//!
//! Flipping an indicator re-runs the particle system forward from the site.
//! At each later event the decision of the old configuration is re-used when
//! the event falls in the same case as before (same kind of collision or path
//! on the same line); colour choices are re-used by rank among the allowed
//! colours. Fresh randomness is drawn only where the old configuration holds
//! no decision of the required kind. Propagation stops once the colours alive
//! at the sweep time agree again with the old configuration.

use crate::dynamics::{
    draw_birth, draw_colour_except, draw_colour_except_two, path_decision, DecisionSource,
    ExactSample, NodeCase, PathChoice,
};
use crate::geometry::{CellId, Event, LineId, NodeId, SegmentId, Tessellation};
use crate::model::{modifier_delta, GibbsModifier, LocalEnergy, ModelParams};
use crate::mosaic::{Colour, Mosaic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McmcError {
    #[error("{kind:?} at {site:?} is not allowed in the current state")]
    IllegalFlip { site: Site, kind: FlipKind },
    #[error("invalid annealing schedule: {0}")]
    BadSchedule(String),
    #[error("recolour rate must be nonnegative and finite, got {0}")]
    BadRate(f64),
    #[error("modifier is not finite on the initial state")]
    InfiniteModifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    Entry(LineId),
    Node(NodeId),
}

impl Site {
    pub fn event(self) -> Event {
        match self {
            Site::Entry(l) => Event::Entry(l),
            Site::Node(n) => Event::Node(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipKind {
    Birth,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentLabel {
    /// Newly carries an edge.
    Plus,
    /// No longer carries an edge.
    Minus,
    /// Still carries an edge, but a colour beside it changed.
    Changed,
    Old,
}

/// Configuration plus the discarded birth sites.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub mosaic: Mosaic,
    /// Per node: a birth was drawn there although trajectories hit it.
    /// Always false at vacant nodes.
    pub discarded: Vec<bool>,
    pub clock: f64,
}

impl ChainState {
    pub fn new(mosaic: Mosaic) -> Self {
        let n = mosaic.tessellation().num_nodes();
        ChainState {
            mosaic,
            discarded: vec![false; n],
            clock: 0.0,
        }
    }

    pub fn from_sample(s: ExactSample) -> Self {
        ChainState {
            mosaic: s.mosaic,
            discarded: s.discarded,
            clock: 0.0,
        }
    }

    /// Birth indicator of a site.
    pub fn occupied(&self, site: Site) -> bool {
        let t = self.mosaic.tessellation();
        let col = self.mosaic.colours();
        match site {
            Site::Entry(l) => {
                let cr = t.crossings(l);
                col[cr.old_cell] != col[cr.new_cell]
            }
            Site::Node(n) => {
                let node = t.node(n);
                let (b, lo, up) = (col[node.before], col[node.lower], col[node.upper]);
                if NodeCase::classify(b, lo, up).is_hit() {
                    self.discarded[n]
                } else {
                    col[node.after] != b
                }
            }
        }
    }

    /// Discarded flags only sit on hit nodes.
    pub fn is_consistent(&self) -> bool {
        let t = self.mosaic.tessellation();
        let col = self.mosaic.colours();
        (0..t.num_nodes()).all(|n| {
            let node = t.node(n);
            !self.discarded[n]
                || NodeCase::classify(col[node.before], col[node.lower], col[node.upper]).is_hit()
        })
    }

    pub fn sites(t: &Tessellation) -> Vec<Site> {
        (0..t.num_lines())
            .map(Site::Entry)
            .chain((0..t.num_nodes()).map(Site::Node))
            .collect()
    }
}

/// Birth and death rate of a site.
pub fn site_rates(site: Site, p: &ModelParams, t: &Tessellation) -> (f64, f64) {
    match site {
        Site::Entry(l) => (t.line(l).activity, 1.0),
        Site::Node(n) => {
            let (a, b) = t.node(n).lines;
            let x = p.alpha_v * t.line(a).activity * t.line(b).activity;
            (x / (p.km1() - x), 1.0)
        }
    }
}

/// A proposed state and the segments whose flag differs from the current one.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub state: ChainState,
    pub changed_segments: Vec<SegmentId>,
    pub changed_cells: Vec<CellId>,
}

fn rank_except(colour: Colour, avoid: Colour) -> usize {
    (if colour < avoid {
        colour - 1
    } else {
        colour - 2
    }) as usize
}

fn colour_except(rank: usize, avoid: Colour) -> Colour {
    let c = rank as Colour + 1;
    if c >= avoid {
        c + 1
    } else {
        c
    }
}

fn rank_except_two(colour: Colour, a: Colour, b: Colour) -> usize {
    (colour - 1) as usize - (a < colour) as usize - (b < colour) as usize
}

fn colour_except_two(rank: usize, a: Colour, b: Colour) -> Colour {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut c = rank as Colour + 1;
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    c
}

/// Decision taken at a hit node: the option index of the case's categorical
/// draw, and the colour rank when a new colour was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HitDecision {
    choice: usize,
    rank: Option<usize>,
}

fn read_decision(case: NodeCase, lower: Colour, upper: Colour, after: Colour) -> HitDecision {
    let (choice, rank) = match case {
        NodeCase::PathFirst | NodeCase::PathSecond => {
            let (cont, turn) = if case == NodeCase::PathFirst {
                (lower, upper)
            } else {
                (upper, lower)
            };
            if after == cont {
                (0, None)
            } else if after == turn {
                (1, None)
            } else {
                (2, Some(rank_except_two(after, lower, upper)))
            }
        }
        NodeCase::CollisionSame => {
            if after == lower {
                (0, None)
            } else {
                (1, Some(rank_except(after, lower)))
            }
        }
        NodeCase::CollisionDifferent => {
            if after == lower {
                (0, None)
            } else if after == upper {
                (1, None)
            } else {
                (2, Some(rank_except_two(after, lower, upper)))
            }
        }
        NodeCase::Vacant => unreachable!("vacant nodes carry no hit decision"),
    };
    HitDecision { choice, rank }
}

fn apply_decision(
    src: &mut dyn DecisionSource,
    k: Colour,
    case: NodeCase,
    lower: Colour,
    upper: Colour,
    d: HitDecision,
) -> Colour {
    match case {
        NodeCase::PathFirst | NodeCase::PathSecond => {
            let (cont, turn) = if case == NodeCase::PathFirst {
                (lower, upper)
            } else {
                (upper, lower)
            };
            match d.choice {
                0 => cont,
                1 => turn,
                _ => match d.rank {
                    Some(r) => colour_except_two(r, lower, upper),
                    None => draw_colour_except_two(src, k, lower, upper),
                },
            }
        }
        NodeCase::CollisionSame => match (d.choice, d.rank) {
            (0, _) => lower,
            (_, Some(r)) => colour_except(r, lower),
            (_, None) => draw_colour_except(src, k, lower),
        },
        NodeCase::CollisionDifferent => match (d.choice, d.rank) {
            (0, _) => lower,
            (1, _) => upper,
            (_, Some(r)) => colour_except_two(r, lower, upper),
            (_, None) => draw_colour_except_two(src, k, lower, upper),
        },
        NodeCase::Vacant => unreachable!("vacant nodes carry no hit decision"),
    }
}

/// Fresh option index for a hit case, without drawing a colour.
fn fresh_choice(
    src: &mut dyn DecisionSource,
    p: &ModelParams,
    pis: (f64, f64),
    case: NodeCase,
) -> usize {
    match case {
        NodeCase::PathFirst => path_index(path_decision(src, p, pis.1)),
        NodeCase::PathSecond => path_index(path_decision(src, p, pis.0)),
        NodeCase::CollisionSame => src.categorical(&[p.alpha_v, p.alpha_x]),
        NodeCase::CollisionDifferent => {
            src.categorical(&[p.alpha_t, p.alpha_t, (1.0 - 2.0 * p.alpha_t).max(0.0)])
        }
        NodeCase::Vacant => unreachable!("vacant nodes carry no hit decision"),
    }
}

fn path_index(c: PathChoice) -> usize {
    match c {
        PathChoice::Continue => 0,
        PathChoice::Turn => 1,
        PathChoice::Split => 2,
    }
}

/// Flips the birth indicator at `site` and propagates the change forward.
pub fn apply_flip(
    state: &ChainState,
    site: Site,
    kind: FlipKind,
    p: &ModelParams,
    src: &mut dyn DecisionSource,
) -> Result<Proposal, McmcError> {
    let occupied = state.occupied(site);
    if occupied != (kind == FlipKind::Death) {
        return Err(McmcError::IllegalFlip { site, kind });
    }
    let t = state.mosaic.tessellation();
    let k = p.k;
    let old = state.mosaic.colours();
    let mut new = old.to_vec();
    let mut discarded = state.discarded.clone();
    let mut changed_cells = Vec::new();
    let start = t.event_index(site.event());
    let mut pending = 0usize;

    for i in start..t.events().len() {
        for &c in t.expiring_before(i) {
            if new[c] != old[c] {
                pending -= 1;
            }
        }
        if i > start && pending == 0 {
            break;
        }
        let created = match t.events()[i] {
            Event::Entry(l) => {
                let cr = t.crossings(l);
                let (old_in, new_in, old_out) =
                    (old[cr.old_cell], new[cr.old_cell], old[cr.new_cell]);
                let old_birth = old_out != old_in;
                let birth = if i == start {
                    kind == FlipKind::Birth
                } else {
                    old_birth
                };
                new[cr.new_cell] = if !birth {
                    new_in
                } else if old_birth {
                    colour_except(rank_except(old_out, old_in), new_in)
                } else {
                    draw_colour_except(src, k, new_in)
                };
                cr.new_cell
            }
            Event::Node(n) => {
                let node = t.node(n);
                let pis = (t.line(node.lines.0).activity, t.line(node.lines.1).activity);
                let (ob, ol, ou, oa) = (
                    old[node.before],
                    old[node.lower],
                    old[node.upper],
                    old[node.after],
                );
                let (nb, nl, nu) = (new[node.before], new[node.lower], new[node.upper]);
                let old_case = NodeCase::classify(ob, ol, ou);
                let new_case = NodeCase::classify(nb, nl, nu);
                let old_birth = if old_case.is_hit() {
                    state.discarded[n]
                } else {
                    oa != ob
                };
                let birth = if i == start {
                    kind == FlipKind::Birth
                } else {
                    old_birth
                };
                new[node.after] = if !new_case.is_hit() {
                    discarded[n] = false;
                    if !birth {
                        nb
                    } else if !old_case.is_hit() && oa != ob {
                        colour_except(rank_except(oa, ob), nb)
                    } else {
                        draw_colour_except(src, k, nb)
                    }
                } else {
                    discarded[n] = birth;
                    let decision = if new_case == old_case {
                        read_decision(old_case, ol, ou, oa)
                    } else {
                        HitDecision {
                            choice: fresh_choice(src, p, pis, new_case),
                            rank: None,
                        }
                    };
                    apply_decision(src, k, new_case, nl, nu, decision)
                };
                node.after
            }
        };
        if new[created] != old[created] {
            pending += 1;
            changed_cells.push(created);
        }
    }

    let mut mosaic = state.mosaic.clone();
    let mut changed_segments = Vec::new();
    for &c in &changed_cells {
        mosaic.set_colour(c, new[c]);
    }
    for &c in &changed_cells {
        for &s in &t.cell(c).segments {
            if mosaic.is_active(s) != state.mosaic.is_active(s) {
                changed_segments.push(s);
            }
        }
    }
    changed_segments.sort_unstable();
    changed_segments.dedup();
    Ok(Proposal {
        state: ChainState {
            mosaic,
            discarded,
            clock: state.clock,
        },
        changed_segments,
        changed_cells,
    })
}

/// Recolours one cell. Nodes that become hit receive a fresh discarded-birth
/// indicator; nodes that become vacant lose theirs.
pub fn recolour_proposal(
    state: &ChainState,
    cell: CellId,
    colour: Colour,
    p: &ModelParams,
    src: &mut dyn DecisionSource,
) -> Proposal {
    let mut mosaic = state.mosaic.clone();
    if mosaic.colour(cell) == colour {
        return Proposal {
            state: state.clone(),
            changed_segments: Vec::new(),
            changed_cells: Vec::new(),
        };
    }
    mosaic.set_colour(cell, colour);
    let t = state.mosaic.tessellation();
    let mut discarded = state.discarded.clone();
    let mut changed_segments = Vec::new();
    let mut nodes = Vec::new();
    for &s in &t.cell(cell).segments {
        if mosaic.is_active(s) != state.mosaic.is_active(s) {
            changed_segments.push(s);
        }
        let seg = t.segment(s);
        for end in [seg.tail, seg.head] {
            if let crate::geometry::SegmentEnd::Node(n) = end {
                nodes.push(n);
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    changed_segments.sort_unstable();
    for n in nodes {
        let node = t.node(n);
        let hit = |m: &Mosaic| {
            NodeCase::classify(
                m.colour(node.before),
                m.colour(node.lower),
                m.colour(node.upper),
            )
            .is_hit()
        };
        match (hit(&state.mosaic), hit(&mosaic)) {
            (false, true) => {
                let pis = (t.line(node.lines.0).activity, t.line(node.lines.1).activity);
                discarded[n] = draw_birth(src, p, pis);
            }
            (true, false) => discarded[n] = false,
            _ => {}
        }
    }
    Proposal {
        state: ChainState {
            mosaic,
            discarded,
            clock: state.clock,
        },
        changed_segments,
        changed_cells: vec![cell],
    }
}

/// Labels of all segments after an update.
pub fn segment_labels(old: &Mosaic, new: &Mosaic) -> Vec<SegmentLabel> {
    let t = old.tessellation();
    t.segments()
        .iter()
        .enumerate()
        .map(|(s, seg)| match (old.is_active(s), new.is_active(s)) {
            (false, true) => SegmentLabel::Plus,
            (true, false) => SegmentLabel::Minus,
            (true, true)
                if old.colour(seg.below) != new.colour(seg.below)
                    || old.colour(seg.above) != new.colour(seg.above) =>
            {
                SegmentLabel::Changed
            }
            _ => SegmentLabel::Old,
        })
        .collect()
}

/// Draws from a plain random generator.
pub struct RngDecisions<'a, R: Rng>(pub &'a mut R);

impl<R: Rng> DecisionSource for RngDecisions<'_, R> {
    fn categorical(&mut self, weights: &[f64]) -> usize {
        crate::dynamics::sample_categorical(self.0, weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Birth,
    Death,
    Recolour,
    /// Thinned clock ring; nothing proposed.
    Idle,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Birth => "birth",
            EventKind::Death => "death",
            EventKind::Recolour => "recolour",
            EventKind::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub clock: f64,
    pub kind: EventKind,
    pub accepted: bool,
    /// Change of the consistent-field Hamiltonian of the proposal.
    pub delta_phi: f64,
    /// Change of the (scaled) modifier energy of the proposal.
    pub delta_h: f64,
}

/// Acceptance probability of a modifier change.
pub fn mh_acceptance(delta_h: f64) -> f64 {
    if delta_h <= 0.0 {
        1.0
    } else {
        (-delta_h).exp()
    }
}

/// Continuous-time chain run through a uniformised clock.
pub struct Chain<'a> {
    params: ModelParams,
    energy: LocalEnergy,
    modifier: Option<&'a dyn GibbsModifier>,
    beta: f64,
    tau: f64,
    sites: Vec<Site>,
    birth_rates: Vec<f64>,
    site_bound: f64,
    rng: ChaCha8Rng,
    state: ChainState,
    h: f64,
}

impl<'a> Chain<'a> {
    pub fn new(
        state: ChainState,
        params: ModelParams,
        modifier: Option<&'a dyn GibbsModifier>,
        tau: f64,
        seed: u64,
    ) -> Result<Self, McmcError> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(McmcError::BadRate(tau));
        }
        let t = state.mosaic.tessellation_arc().clone();
        let sites = ChainState::sites(&t);
        let birth_rates: Vec<f64> = sites
            .iter()
            .map(|&s| site_rates(s, &params, &t).0)
            .collect();
        let site_bound = birth_rates.iter().copied().fold(1.0, f64::max);
        let h = modifier.map_or(0.0, |m| m.evaluate(&state.mosaic));
        if !h.is_finite() {
            return Err(McmcError::InfiniteModifier);
        }
        Ok(Chain {
            energy: LocalEnergy::new(t, &params),
            params,
            modifier,
            beta: 1.0,
            tau,
            sites,
            birth_rates,
            site_bound,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            h,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    /// Unscaled modifier energy of the current state.
    pub fn modifier_energy(&self) -> f64 {
        self.h
    }

    /// Multiplier applied to the modifier.
    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Total rate of the uniformised clock.
    pub fn clock_rate(&self) -> f64 {
        self.tau + self.sites.len() as f64 * self.site_bound
    }

    /// One ring of the uniformised clock.
    pub fn step(&mut self) -> StepRecord {
        let lambda = self.clock_rate();
        if lambda <= 0.0 {
            return StepRecord {
                clock: self.state.clock,
                kind: EventKind::Idle,
                accepted: false,
                delta_phi: 0.0,
                delta_h: 0.0,
            };
        }
        let hold: f64 = -(1.0 - self.rng.gen::<f64>()).ln() / lambda;
        self.state.clock += hold;
        let clock = self.state.clock;
        let u = self.rng.gen::<f64>() * lambda;
        let k = self.params.k;

        let (kind, proposal, consistent_accept) = if u < self.tau {
            let cell = self
                .rng
                .gen_range(0..self.state.mosaic.tessellation().num_cells());
            let colour = self.rng.gen_range(1..=k);
            let prop = recolour_proposal(
                &self.state,
                cell,
                colour,
                &self.params,
                &mut RngDecisions(&mut self.rng),
            );
            (EventKind::Recolour, prop, true)
        } else {
            let i = (((u - self.tau) / self.site_bound) as usize).min(self.sites.len() - 1);
            let site = self.sites[i];
            let occupied = self.state.occupied(site);
            let rate = if occupied { 1.0 } else { self.birth_rates[i] };
            let kind = if occupied {
                EventKind::Death
            } else {
                EventKind::Birth
            };
            if self.rng.gen::<f64>() * self.site_bound >= rate {
                return StepRecord {
                    clock,
                    kind: EventKind::Idle,
                    accepted: false,
                    delta_phi: 0.0,
                    delta_h: 0.0,
                };
            }
            let flip = if occupied {
                FlipKind::Death
            } else {
                FlipKind::Birth
            };
            let prop = apply_flip(
                &self.state,
                site,
                flip,
                &self.params,
                &mut RngDecisions(&mut self.rng),
            )
            .expect("flip matches the occupancy");
            (kind, prop, false)
        };

        let (dlw, dlpi) = self.energy.delta_parts(
            &self.state.mosaic,
            &proposal.state.mosaic,
            &proposal.changed_segments,
        );
        let delta_phi = -(dlw - dlpi);
        let dh_raw = match self.modifier {
            Some(m) => modifier_delta(
                m,
                &self.state.mosaic,
                &proposal.state.mosaic,
                &proposal.changed_segments,
            ),
            None => 0.0,
        };
        let delta_h = self.beta * dh_raw;
        let mut accepted = true;
        if consistent_accept && dlw < 0.0 {
            accepted = self.rng.gen::<f64>() < dlw.exp();
        }
        if accepted && delta_h > 0.0 {
            accepted = self.rng.gen::<f64>() < mh_acceptance(delta_h);
        }
        if accepted {
            self.state.mosaic = proposal.state.mosaic;
            self.state.discarded = proposal.state.discarded;
            self.h += dh_raw;
        }
        StepRecord {
            clock,
            kind,
            accepted,
            delta_phi,
            delta_h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub multiplier: f64,
    pub sweeps: usize,
}

impl AnnealSchedule {
    /// Geometric schedule reaching `beta_end` after exactly `sweeps` sweeps.
    pub fn geometric(beta_start: f64, beta_end: f64, sweeps: usize) -> Result<Self, McmcError> {
        let multiplier = if sweeps == 0 {
            f64::NAN
        } else {
            (beta_end / beta_start).powf(1.0 / sweeps as f64)
        };
        let s = AnnealSchedule {
            beta_start,
            beta_end,
            multiplier,
            sweeps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        let bad = |m: &str| Err(McmcError::BadSchedule(m.to_string()));
        if !(self.beta_start > 0.0 && self.beta_start.is_finite() && self.beta_end.is_finite()) {
            return bad("inverse temperatures must be positive and finite");
        }
        if self.beta_start > self.beta_end {
            return bad("beta_start exceeds beta_end");
        }
        if !(self.multiplier > 1.0 && self.multiplier.is_finite()) {
            return bad("multiplier must exceed 1");
        }
        if self.sweeps == 0 {
            return bad("need at least one sweep");
        }
        let reached = self.beta_start * self.multiplier.powf(self.sweeps as f64);
        if reached < self.beta_end * (1.0 - 1e-12) {
            return bad("schedule does not reach beta_end");
        }
        Ok(())
    }

    /// Inverse temperature during sweep `s` (0-based).
    pub fn beta_at(&self, s: usize) -> f64 {
        (self.beta_start * self.multiplier.powf(s as f64)).min(self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub sweep: usize,
    pub beta: f64,
    /// Unscaled modifier energy at the end of the sweep.
    pub energy: f64,
    /// Lowest modifier energy visited so far.
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub best: Mosaic,
    pub best_energy: f64,
    pub last: ChainState,
    pub trace: Vec<TraceRow>,
}

/// Simulated annealing of the modifier on top of the consistent field.
///
/// A sweep lasts one unit of chain time. The returned configuration is the
/// visited one with the lowest unscaled modifier energy; among equal
/// energies the latest visit wins.
pub fn anneal(
    initial: ChainState,
    params: &ModelParams,
    modifier: &dyn GibbsModifier,
    schedule: &AnnealSchedule,
    tau: f64,
    seed: u64,
) -> Result<AnnealResult, McmcError> {
    schedule.validate()?;
    let mut chain = Chain::new(initial, *params, Some(modifier), tau, seed)?;
    let mut best = chain.state().mosaic.clone();
    let mut best_energy = chain.modifier_energy();
    let mut trace = Vec::with_capacity(schedule.sweeps);
    for s in 0..schedule.sweeps {
        let beta = schedule.beta_at(s);
        chain.set_beta(beta);
        let end = chain.state().clock + 1.0;
        while chain.state().clock < end {
            let rec = chain.step();
            if rec.accepted && chain.modifier_energy() <= best_energy {
                best_energy = chain.modifier_energy();
                best = chain.state().mosaic.clone();
            }
        }
        trace.push(TraceRow {
            sweep: s,
            beta,
            energy: chain.modifier_energy(),
            best: best_energy,
        });
    }
    Ok(AnnealResult {
        best,
        best_energy,
        last: chain.into_state(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_exact_augmented, Script};
    use crate::geometry::build_uniform_lattice;
    use crate::model::{derive_params, log_weight};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn lattice(rows: usize, cols: usize) -> Arc<Tessellation> {
        Arc::new(build_uniform_lattice(rows, cols, 0.5).unwrap())
    }

    #[test]
    fn rates() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        assert_eq!(site_rates(Site::Entry(0), &p, &t), (0.5, 1.0));
        let (b, d) = site_rates(Site::Node(0), &p, &t);
        assert_relative_eq!(b, 1.0 / 15.0, epsilon = 1e-15);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn boundary_birth_on_empty_mosaic() {
        let t = lattice(3, 3);
        let p = derive_params(3, 0.5).unwrap();
        let s = ChainState::new(Mosaic::monochrome(t.clone(), 3, 1).unwrap());
        let prop = apply_flip(
            &s,
            Site::Entry(0),
            FlipKind::Birth,
            &p,
            &mut Script::new(vec![1]),
        )
        .unwrap();
        let m = &prop.state.mosaic;
        assert!(m.is_admissible());
        let stats = m.analyze().unwrap();
        // the new trajectory runs from the entry point to the boundary
        assert_eq!(stats.n_boundary, 2);
        assert!(prop.state.occupied(Site::Entry(0)));
        assert!(matches!(
            apply_flip(
                &s,
                Site::Entry(0),
                FlipKind::Death,
                &p,
                &mut Script::new(vec![])
            ),
            Err(McmcError::IllegalFlip { .. })
        ));
    }

    #[test]
    fn birth_then_death_restores_state() {
        let t = lattice(4, 4);
        let p = derive_params(3, 0.5).unwrap();
        for seed in 0..50 {
            let s = ChainState::from_sample(sample_exact_augmented(&t, &p, seed));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for site in ChainState::sites(&t) {
                let kind = if s.occupied(site) {
                    FlipKind::Death
                } else {
                    FlipKind::Birth
                };
                let back = if kind == FlipKind::Birth {
                    FlipKind::Death
                } else {
                    FlipKind::Birth
                };
                let a = apply_flip(&s, site, kind, &p, &mut RngDecisions(&mut rng)).unwrap();
                assert!(a.state.mosaic.is_admissible());
                assert!(a.state.is_consistent());
                assert_eq!(a.state.occupied(site), kind == FlipKind::Birth);
                // undoing is possible and lands on an admissible state as well
                let b = apply_flip(&a.state, site, back, &p, &mut RngDecisions(&mut rng)).unwrap();
                assert!(b.state.mosaic.is_admissible());
            }
        }
    }

    #[test]
    fn flip_at_discarded_site_only_toggles_flag() {
        let t = lattice(2, 2);
        let p = derive_params(3, 0.5).unwrap();
        let m = crate::mosaic::pixels_to_mosaic(
            &crate::mosaic::PixelArray::new(2, 2, vec![1, 2, 1, 2]),
            t.clone(),
            3,
        )
        .unwrap();
        let s = ChainState::new(m);
        let a = apply_flip(
            &s,
            Site::Node(0),
            FlipKind::Birth,
            &p,
            &mut Script::new(vec![]),
        )
        .unwrap();
        assert!(a.state.discarded[0]);
        assert_eq!(a.state.mosaic, s.mosaic);
        assert!(a.changed_segments.is_empty());
    }

    #[test]
    fn recolour_of_empty_mosaic() {
        let t = lattice(1, 1);
        let p = derive_params(3, 0.5).unwrap();
        let s = ChainState::new(Mosaic::monochrome(t, 3, 1).unwrap());
        let prop = recolour_proposal(&s, 0, 2, &p, &mut Script::new(vec![]));
        assert_eq!(prop.state.mosaic.colour(0), 2);
        assert_eq!(
            log_weight(&prop.state.mosaic, &p),
            log_weight(&s.mosaic, &p)
        );
        let same = recolour_proposal(&s, 0, 1, &p, &mut Script::new(vec![]));
        assert_eq!(same.state, s);
    }

    #[test]
    fn labels() {
        let t = lattice(2, 2);
        let a = crate::mosaic::pixels_to_mosaic(
            &crate::mosaic::PixelArray::new(2, 2, vec![1, 2, 1, 2]),
            t.clone(),
            3,
        )
        .unwrap();
        let b = crate::mosaic::pixels_to_mosaic(
            &crate::mosaic::PixelArray::new(2, 2, vec![1, 3, 2, 3]),
            t.clone(),
            3,
        )
        .unwrap();
        let l = segment_labels(&a, &b);
        assert_eq!(l.iter().filter(|&&x| x == SegmentLabel::Plus).count(), 1);
        assert_eq!(l.iter().filter(|&&x| x == SegmentLabel::Changed).count(), 2);
        assert_eq!(l.iter().filter(|&&x| x == SegmentLabel::Old).count(), 1);
    }

    #[test]
    fn acceptance_probabilities() {
        assert_eq!(mh_acceptance(0.0), 1.0);
        assert_eq!(mh_acceptance(-3.0), 1.0);
        assert_relative_eq!(mh_acceptance(2f64.ln()), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn schedules() {
        let s = AnnealSchedule::geometric(0.1, 100.0, 500).unwrap();
        assert!(s.multiplier > 1.0);
        assert_relative_eq!(s.beta_at(500), 100.0);
        assert_relative_eq!(s.beta_at(0), 0.1);
        assert!(AnnealSchedule {
            beta_start: 1.0,
            beta_end: 0.5,
            multiplier: 1.1,
            sweeps: 10
        }
        .validate()
        .is_err());
        assert!(AnnealSchedule {
            beta_start: 0.1,
            beta_end: 100.0,
            multiplier: 1.01,
            sweeps: 10
        }
        .validate()
        .is_err());
    }

    #[test]
    fn chain_keeps_states_valid() {
        let t = lattice(4, 3);
        let p = derive_params(4, 0.5).unwrap();
        let s = ChainState::from_sample(sample_exact_augmented(&t, &p, 3));
        let mut chain = Chain::new(s, p, None, 2.0, 9).unwrap();
        assert_relative_eq!(chain.clock_rate(), 2.0 + (5 + 6) as f64);
        for _ in 0..5000 {
            chain.step();
            assert!(chain.state().mosaic.is_admissible());
            assert!(chain.state().is_consistent());
        }
    }
}
