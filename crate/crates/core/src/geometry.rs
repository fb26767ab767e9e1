//! Regular linear tessellations of bounded convex domains.
//!
//! A [`Tessellation`] is the finite trace of a line family inside a convex
//! polygon. Construction runs a plane sweep in time-space coordinates
//! `(t, s)`: `t` is the time axis of the particle dynamics and `s` the
//! spatial axis. The sweep yields the nodes (pairwise crossings), the
//! segments between consecutive events on each line, the convex cells of the
//! induced partition and, for every dynamic event, the cells on either side
//! of it. All later modules work on these indices.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Incidence and concurrence tolerance, in domain units.
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;

/// Rotation (radians) applied when the unrotated frame has vertical lines,
/// vertical domain sides or simultaneous events.
pub const CANONICAL_ROTATION: f64 = 1e-4;

pub type LineId = usize;
pub type NodeId = usize;
pub type SegmentId = usize;
pub type CellId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("activity {activity} of line {line} is outside (0, 1)")]
    BadActivity { line: usize, activity: f64 },
    #[error("line {0} has a degenerate normal vector")]
    DegenerateLine(usize),
    #[error("domain must be a bounded convex polygon with nonempty interior")]
    BadDomain,
    #[error("lines {0}, {1} and {2} meet at a common point")]
    ThreeConcurrentLines(usize, usize, usize),
    #[error("line {0} does not cross the domain boundary in two points")]
    LineMissesDomain(usize),
    #[error("crossing of lines {0} and {1} lies on the domain boundary")]
    NodeOnBoundary(usize, usize),
    #[error("line {0} passes through a corner of the domain")]
    LineThroughCorner(usize),
    #[error("lines {0} and {1} coincide")]
    DuplicateLine(usize, usize),
    #[error("two events share time coordinate {0} even after canonical rotation")]
    TieBreakFailure(f64),
    #[error("lattice needs {expected} line activities, got {got}")]
    ActivityCount { expected: usize, got: usize },
    #[error("lattice dimensions must be at least 1x1")]
    EmptyLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn distance(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// A straight line `a x + b y = c` with `a² + b² = 1` and activity `π ∈ (0, 1)`.
///
/// The normal is kept in canonical orientation: `a > 0`, or `a = 0` and `b > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub activity: f64,
}

impl Line {
    pub fn new(id: usize, a: f64, b: f64, c: f64, activity: f64) -> Result<Self, GeometryError> {
        let norm = a.hypot(b);
        if !(norm.is_finite() && norm > 1e-300 && c.is_finite()) {
            return Err(GeometryError::DegenerateLine(id));
        }
        if !(activity > 0.0 && activity < 1.0) {
            return Err(GeometryError::BadActivity { line: id, activity });
        }
        let (mut a, mut b, mut c) = (a / norm, b / norm, c / norm);
        if a < 0.0 || (a == 0.0 && b < 0.0) {
            a = -a;
            b = -b;
            c = -c;
        }
        // avoid a signed zero in the canonical form
        if a == 0.0 {
            a = 0.0;
        }
        Ok(Line {
            id,
            a,
            b,
            c,
            activity,
        })
    }

    /// The line `x cos θ + y sin θ = ρ`.
    pub fn from_polar(
        id: usize,
        theta: f64,
        rho: f64,
        activity: f64,
    ) -> Result<Self, GeometryError> {
        Line::new(id, theta.cos(), theta.sin(), rho, activity)
    }

    pub fn signed_distance(&self, p: Point) -> f64 {
        self.a * p.x + self.b * p.y - self.c
    }

    /// Unit direction vector.
    pub fn direction(&self) -> Point {
        Point::new(-self.b, self.a)
    }

    /// Foot of the perpendicular from the origin.
    pub fn foot(&self) -> Point {
        Point::new(self.a * self.c, self.b * self.c)
    }

    pub fn with_offset(&self, c: f64) -> Line {
        Line { c, ..*self }
    }
}

/// A bounded convex polygon, stored with positive orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    vertices: Vec<Point>,
}

impl Domain {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let (xa, xb) = (x0.min(x1), x0.max(x1));
        let (ya, yb) = (y0.min(y1), y0.max(y1));
        Domain::polygon(vec![
            Point::new(xa, ya),
            Point::new(xb, ya),
            Point::new(xb, yb),
            Point::new(xa, yb),
        ])
    }

    /// Validates strict convexity; either orientation is accepted.
    pub fn polygon(mut vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3
            || vertices
                .iter()
                .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(GeometryError::BadDomain);
        }
        let area: f64 = (0..n)
            .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
            .sum::<f64>()
            / 2.0;
        if area.abs() <= GEOMETRY_TOLERANCE {
            return Err(GeometryError::BadDomain);
        }
        if area < 0.0 {
            vertices.reverse();
        }
        for i in 0..n {
            let p = vertices[i];
            let q = vertices[(i + 1) % n];
            let r = vertices[(i + 2) % n];
            if q.sub(p).cross(r.sub(q)) <= GEOMETRY_TOLERANCE * q.distance(p).max(1.0) {
                return Err(GeometryError::BadDomain);
            }
        }
        Ok(Domain { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let v = self.vertices[i];
                let e = self.vertices[(i + 1) % n].sub(v);
                e.cross(p.sub(v)) / e.x.hypot(e.y)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.boundary_distance(p) > 0.0
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Endpoints of the part of `line` inside the polygon.
    pub fn chord(&self, line: &Line) -> Option<(Point, Point)> {
        let c = self.clip(line)?;
        let (p0, d) = (line.foot(), line.direction());
        Some((
            Point::new(p0.x + c.lo * d.x, p0.y + c.lo * d.y),
            Point::new(p0.x + c.hi * d.x, p0.y + c.hi * d.y),
        ))
    }

    /// Parameter interval of `foot + λ·direction` inside the closed polygon,
    /// together with the polygon edges hit at either end.
    fn clip(&self, line: &Line) -> Option<Clip> {
        let p0 = line.foot();
        let d = line.direction();
        let n = self.vertices.len();
        let mut lo = (f64::NEG_INFINITY, usize::MAX);
        let mut hi = (f64::INFINITY, usize::MAX);
        for i in 0..n {
            let v = self.vertices[i];
            let e = self.vertices[(i + 1) % n].sub(v);
            let len = e.x.hypot(e.y);
            // inside: e × (p0 + λ d − v) ≥ 0
            let base = e.cross(p0.sub(v)) / len;
            let slope = e.cross(d) / len;
            if slope.abs() < 1e-15 {
                if base < 0.0 {
                    return None;
                }
                continue;
            }
            let root = -base / slope;
            if slope > 0.0 {
                if root > lo.0 {
                    lo = (root, i);
                }
            } else if root < hi.0 {
                hi = (root, i);
            }
        }
        if lo.0 < hi.0 {
            Some(Clip {
                lo: lo.0,
                lo_edge: lo.1,
                hi: hi.0,
                hi_edge: hi.1,
            })
        } else {
            None
        }
    }
}

struct Clip {
    lo: f64,
    lo_edge: usize,
    hi: f64,
    hi_edge: usize,
}

/// Time-space frame: `t = x cos φ + y sin φ`, `s = −x sin φ + y cos φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rotation: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    fn new(rotation: f64) -> Self {
        Frame {
            rotation,
            cos: rotation.cos(),
            sin: rotation.sin(),
        }
    }

    pub fn time(&self, p: Point) -> f64 {
        p.x * self.cos + p.y * self.sin
    }

    pub fn space(&self, p: Point) -> f64 {
        -p.x * self.sin + p.y * self.cos
    }
}

/// An interior crossing of two lines.
///
/// `lines.0` is the line lying below the other one before the crossing (in
/// the spatial coordinate); after the crossing the two swap.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub position: Point,
    pub time: f64,
    pub lines: (LineId, LineId),
    /// Cell ending at the node (between the two incoming segments).
    pub before: CellId,
    /// Cell below both lines around the node.
    pub lower: CellId,
    /// Cell above both lines around the node.
    pub upper: CellId,
    /// Cell starting at the node (between the two outgoing segments).
    pub after: CellId,
    /// Incoming segment on `lines.0`, separating `lower` and `before`.
    pub in_below: SegmentId,
    /// Incoming segment on `lines.1`, separating `before` and `upper`.
    pub in_above: SegmentId,
    /// Outgoing segment on `lines.1`, separating `lower` and `after`.
    pub out_below: SegmentId,
    /// Outgoing segment on `lines.0`, separating `after` and `upper`.
    pub out_above: SegmentId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEnd {
    Boundary,
    Node(NodeId),
}

/// Piece of a line between consecutive events on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub line: LineId,
    pub tail: SegmentEnd,
    pub head: SegmentEnd,
    pub tail_point: Point,
    pub head_point: Point,
    /// Cell on the low-`s` side.
    pub below: CellId,
    /// Cell on the high-`s` side.
    pub above: CellId,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.tail_point.distance(self.head_point)
    }

    pub fn other_cell(&self, c: CellId) -> CellId {
        if self.below == c {
            self.above
        } else {
            self.below
        }
    }
}

/// Where a line enters and leaves the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCrossings {
    pub entry: Point,
    pub exit: Point,
    pub entry_time: f64,
    pub exit_time: f64,
    /// Cell that continues past the entry point.
    pub old_cell: CellId,
    /// Cell whose left-most point is the entry point.
    pub new_cell: CellId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellOrigin {
    /// The cell containing the left-most point of the domain.
    Initial,
    Entry(LineId),
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub origin: CellOrigin,
    /// Convex polygon, positively oriented, in original coordinates.
    pub polygon: Vec<Point>,
    /// Segments on the cell boundary.
    pub segments: Vec<SegmentId>,
}

impl Cell {
    pub fn centroid(&self) -> Point {
        polygon_centroid(&self.polygon)
    }
}

/// A dynamic event in chronological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Entry(LineId),
    Node(NodeId),
}

/// Integer row/column indexing for pixel lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeIndex {
    pub rows: usize,
    pub cols: usize,
    /// Cell of pixel `(r, c)` at `r * cols + c`.
    pixel_cell: Vec<CellId>,
    cell_pixel: Vec<(usize, usize)>,
}

impl LatticeIndex {
    pub fn cell(&self, row: usize, col: usize) -> CellId {
        self.pixel_cell[row * self.cols + col]
    }

    pub fn pixel(&self, cell: CellId) -> (usize, usize) {
        self.cell_pixel[cell]
    }

    /// Index of the horizontal line between rows `r` and `r + 1`.
    pub fn horizontal_line(&self, r: usize) -> LineId {
        r
    }

    /// Index of the vertical line between columns `c` and `c + 1`.
    pub fn vertical_line(&self, c: usize) -> LineId {
        self.rows - 1 + c
    }
}

/// A validated regular linear tessellation of a convex domain.
#[derive(Debug, Clone)]
pub struct Tessellation {
    lines: Vec<Line>,
    domain: Domain,
    frame: Frame,
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    cells: Vec<Cell>,
    crossings: Vec<BoundaryCrossings>,
    line_segments: Vec<Vec<SegmentId>>,
    events: Vec<Event>,
    event_times: Vec<f64>,
    /// Cells whose last moment lies between dynamic events `i - 1` and `i`.
    expiring: Vec<Vec<CellId>>,
    lattice: Option<LatticeIndex>,
}

enum Attempt {
    NeedsRotation(f64),
    Fatal(GeometryError),
}

impl From<GeometryError> for Attempt {
    fn from(e: GeometryError) -> Self {
        Attempt::Fatal(e)
    }
}

/// Validates a line family against a domain and builds the tessellation.
pub fn build_tessellation(lines: Vec<Line>, domain: Domain) -> Result<Tessellation, GeometryError> {
    Tessellation::build(lines, domain, None)
}

/// Pixel lattice with `rows × cols` unit cells covering `[0, cols] × [0, rows]`.
///
/// Lines are indexed horizontals first (between rows `r` and `r + 1`, top to
/// bottom), then verticals (between columns `c` and `c + 1`, left to right).
/// The canonical rotation makes chronological order equal column-major order.
pub fn build_lattice(
    rows: usize,
    cols: usize,
    activities: &[f64],
) -> Result<Tessellation, GeometryError> {
    if rows == 0 || cols == 0 {
        return Err(GeometryError::EmptyLattice);
    }
    let expected = rows + cols - 2;
    if activities.len() != expected {
        return Err(GeometryError::ActivityCount {
            expected,
            got: activities.len(),
        });
    }
    let mut lines = Vec::with_capacity(expected);
    for r in 1..rows {
        lines.push(Line::new(
            lines.len(),
            0.0,
            1.0,
            r as f64,
            activities[lines.len()],
        )?);
    }
    for c in 1..cols {
        lines.push(Line::new(
            lines.len(),
            1.0,
            0.0,
            c as f64,
            activities[lines.len()],
        )?);
    }
    let domain = Domain::rectangle(0.0, 0.0, cols as f64, rows as f64)?;
    Tessellation::build(lines, domain, Some((rows, cols)))
}

/// Lattice with the same activity on every line.
pub fn build_uniform_lattice(
    rows: usize,
    cols: usize,
    activity: f64,
) -> Result<Tessellation, GeometryError> {
    let n = (rows + cols).saturating_sub(2);
    build_lattice(rows, cols, &vec![activity; n])
}

impl Tessellation {
    fn build(
        lines: Vec<Line>,
        domain: Domain,
        lattice: Option<(usize, usize)>,
    ) -> Result<Self, GeometryError> {
        check_static(&lines, &domain)?;
        // lattices always have vertical lines, so go straight to the rotated frame
        if lattice.is_none() {
            match Self::sweep(&lines, &domain, Frame::new(0.0)) {
                Ok(t) => return Ok(t),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::NeedsRotation(_)) => {}
            }
        }
        let mut t = match Self::sweep(&lines, &domain, Frame::new(CANONICAL_ROTATION)) {
            Ok(t) => t,
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::NeedsRotation(time)) => return Err(GeometryError::TieBreakFailure(time)),
        };
        if let Some((rows, cols)) = lattice {
            t.lattice = Some(t.index_lattice(rows, cols));
        }
        Ok(t)
    }

    fn sweep(lines: &[Line], domain: &Domain, frame: Frame) -> Result<Self, Attempt> {
        let verts = domain.vertices();
        let nv = verts.len();
        let vt: Vec<f64> = verts.iter().map(|&p| frame.time(p)).collect();
        for i in 0..nv {
            let j = (i + 1) % nv;
            if (vt[i] - vt[j]).abs() <= GEOMETRY_TOLERANCE {
                return Err(Attempt::NeedsRotation(vt[i]));
            }
        }
        // an edge i → i+1 whose time increases belongs to the lower chain
        let lower_edge = |i: usize| vt[(i + 1) % nv] > vt[i];

        #[derive(Clone, Copy)]
        enum Raw {
            Vertex(usize),
            Entry(LineId),
            Exit(LineId),
            Node(usize),
        }
        let mut raw: Vec<(f64, Raw)> = Vec::new();
        for (i, &t) in vt.iter().enumerate() {
            raw.push((t, Raw::Vertex(i)));
        }

        struct Ends {
            entry: Point,
            exit: Point,
            entry_lower: bool,
            exit_lower: bool,
        }
        let mut ends = Vec::with_capacity(lines.len());
        for (li, line) in lines.iter().enumerate() {
            let clip = domain
                .clip(line)
                .ok_or(GeometryError::LineMissesDomain(li))?;
            let p0 = line.foot();
            let d = line.direction();
            let a = Point::new(p0.x + clip.lo * d.x, p0.y + clip.lo * d.y);
            let b = Point::new(p0.x + clip.hi * d.x, p0.y + clip.hi * d.y);
            let (ta, tb) = (frame.time(a), frame.time(b));
            if (ta - tb).abs() <= GEOMETRY_TOLERANCE {
                return Err(Attempt::NeedsRotation(ta));
            }
            let e = if ta < tb {
                Ends {
                    entry: a,
                    exit: b,
                    entry_lower: lower_edge(clip.lo_edge),
                    exit_lower: lower_edge(clip.hi_edge),
                }
            } else {
                Ends {
                    entry: b,
                    exit: a,
                    entry_lower: lower_edge(clip.hi_edge),
                    exit_lower: lower_edge(clip.lo_edge),
                }
            };
            raw.push((frame.time(e.entry), Raw::Entry(li)));
            raw.push((frame.time(e.exit), Raw::Exit(li)));
            ends.push(e);
        }

        let mut node_pairs: Vec<(Point, LineId, LineId)> = Vec::new();
        for i in 0..lines.len() {
            for j in (i + 1)..lines.len() {
                if let Some(p) = intersection(&lines[i], &lines[j]) {
                    if domain.boundary_distance(p) > GEOMETRY_TOLERANCE {
                        raw.push((frame.time(p), Raw::Node(node_pairs.len())));
                        node_pairs.push((p, i, j));
                    }
                }
            }
        }

        raw.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal));
        let mut last_time: Option<f64> = None;
        for &(t, kind) in &raw {
            if matches!(kind, Raw::Vertex(_)) {
                continue;
            }
            if let Some(prev) = last_time {
                if t - prev <= GEOMETRY_TOLERANCE {
                    return Err(Attempt::NeedsRotation(t));
                }
            }
            last_time = Some(t);
        }

        let mut cells: Vec<CellBuilder> = Vec::new();
        let mut segments: Vec<Segment> = Vec::new();
        let mut nodes: Vec<Node> = Vec::with_capacity(node_pairs.len());
        let mut node_index = vec![usize::MAX; node_pairs.len()];
        let mut crossings: Vec<Option<BoundaryCrossings>> = vec![None; lines.len()];
        let mut line_segments: Vec<Vec<SegmentId>> = vec![Vec::new(); lines.len()];
        let mut current_seg: Vec<SegmentId> = vec![usize::MAX; lines.len()];
        let mut events = Vec::new();
        let mut event_times = Vec::new();
        let mut cell_end: Vec<f64> = Vec::new();

        // spatially ordered live lines, and the cells between them
        let mut active: Vec<LineId> = Vec::new();
        let mut slots: Vec<CellId> = Vec::new();

        let leftmost = (0..nv)
            .min_by(|&i, &j| vt[i].partial_cmp(&vt[j]).unwrap_or(Ordering::Equal))
            .unwrap_or(0);
        cells.push(CellBuilder::new(CellOrigin::Initial, verts[leftmost]));
        cell_end.push(f64::INFINITY);
        slots.push(0);

        let open_segment = |segments: &mut Vec<Segment>,
                            line: LineId,
                            tail: SegmentEnd,
                            tail_point: Point,
                            below: CellId,
                            above: CellId| {
            let id = segments.len();
            segments.push(Segment {
                line,
                tail,
                head: SegmentEnd::Boundary,
                tail_point,
                head_point: tail_point,
                below,
                above,
            });
            id
        };

        for &(t, kind) in &raw {
            match kind {
                Raw::Vertex(v) => {
                    if v == leftmost {
                        continue;
                    }
                    let slot = if lower_edge(v) { 0 } else { slots.len() - 1 };
                    cells[slots[slot]].points.push(verts[v]);
                }
                Raw::Entry(l) => {
                    let e = &ends[l];
                    let new_cell = cells.len();
                    cells.push(CellBuilder::new(CellOrigin::Entry(l), e.entry));
                    cell_end.push(f64::INFINITY);
                    let (old_cell, below, above) = if e.entry_lower {
                        let old = slots[0];
                        active.insert(0, l);
                        slots.insert(0, new_cell);
                        (old, new_cell, old)
                    } else {
                        let old = *slots.last().unwrap();
                        active.push(l);
                        slots.push(new_cell);
                        (old, old, new_cell)
                    };
                    cells[old_cell].points.push(e.entry);
                    let seg = open_segment(
                        &mut segments,
                        l,
                        SegmentEnd::Boundary,
                        e.entry,
                        below,
                        above,
                    );
                    current_seg[l] = seg;
                    line_segments[l].push(seg);
                    crossings[l] = Some(BoundaryCrossings {
                        entry: e.entry,
                        exit: e.exit,
                        entry_time: t,
                        exit_time: frame.time(e.exit),
                        old_cell,
                        new_cell,
                    });
                    events.push(Event::Entry(l));
                    event_times.push(t);
                }
                Raw::Exit(l) => {
                    let e = &ends[l];
                    let pos = if e.exit_lower { 0 } else { active.len() - 1 };
                    if active.get(pos) != Some(&l) {
                        return Err(Attempt::NeedsRotation(t));
                    }
                    let seg = current_seg[l];
                    segments[seg].head = SegmentEnd::Boundary;
                    segments[seg].head_point = e.exit;
                    active.remove(pos);
                    let dying = if e.exit_lower {
                        slots.remove(0)
                    } else {
                        slots.pop().unwrap()
                    };
                    let survivor = if e.exit_lower {
                        slots[0]
                    } else {
                        *slots.last().unwrap()
                    };
                    cells[dying].points.push(e.exit);
                    cells[survivor].points.push(e.exit);
                    cell_end[dying] = t;
                }
                Raw::Node(k) => {
                    let (p, l1, l2) = node_pairs[k];
                    let i1 = active.iter().position(|&x| x == l1);
                    let i2 = active.iter().position(|&x| x == l2);
                    let (lo, hi) = match (i1, i2) {
                        (Some(a), Some(b)) if a + 1 == b => (a, b),
                        (Some(a), Some(b)) if b + 1 == a => (b, a),
                        _ => return Err(Attempt::NeedsRotation(t)),
                    };
                    let (pl, ql) = (active[lo], active[hi]);
                    let id = nodes.len();
                    node_index[k] = id;
                    let before = slots[hi];
                    let lower = slots[lo];
                    let upper = slots[hi + 1];
                    let after = cells.len();
                    cells.push(CellBuilder::new(CellOrigin::Node(id), p));
                    cell_end.push(f64::INFINITY);
                    cell_end[before] = t;
                    for c in [before, lower, upper] {
                        cells[c].points.push(p);
                    }
                    let in_below = current_seg[pl];
                    let in_above = current_seg[ql];
                    for s in [in_below, in_above] {
                        segments[s].head = SegmentEnd::Node(id);
                        segments[s].head_point = p;
                    }
                    active.swap(lo, hi);
                    slots[hi] = after;
                    let out_below =
                        open_segment(&mut segments, ql, SegmentEnd::Node(id), p, lower, after);
                    let out_above =
                        open_segment(&mut segments, pl, SegmentEnd::Node(id), p, after, upper);
                    current_seg[ql] = out_below;
                    current_seg[pl] = out_above;
                    line_segments[ql].push(out_below);
                    line_segments[pl].push(out_above);
                    nodes.push(Node {
                        position: p,
                        time: t,
                        lines: (pl, ql),
                        before,
                        lower,
                        upper,
                        after,
                        in_below,
                        in_above,
                        out_below,
                        out_above,
                    });
                    events.push(Event::Node(id));
                    event_times.push(t);
                }
            }
        }

        let crossings: Vec<BoundaryCrossings> = crossings
            .into_iter()
            .map(|c| c.expect("every line enters"))
            .collect();

        let mut cells: Vec<Cell> = cells
            .into_iter()
            .map(|b| Cell {
                origin: b.origin,
                polygon: convex_hull(b.points),
                segments: Vec::new(),
            })
            .collect();
        for (sid, s) in segments.iter().enumerate() {
            cells[s.below].segments.push(sid);
            cells[s.above].segments.push(sid);
        }

        let mut expiring = vec![Vec::new(); events.len() + 1];
        for (c, &end) in cell_end.iter().enumerate() {
            let idx = event_times.partition_point(|&et| et <= end);
            expiring[idx].push(c);
        }

        Ok(Tessellation {
            lines: lines.to_vec(),
            domain: domain.clone(),
            frame,
            nodes,
            segments,
            cells,
            crossings,
            line_segments,
            events,
            event_times,
            expiring,
            lattice: None,
        })
    }

    fn index_lattice(&self, rows: usize, cols: usize) -> LatticeIndex {
        let mut pixel_cell = vec![usize::MAX; rows * cols];
        let mut cell_pixel = vec![(0, 0); self.cells.len()];
        for (id, cell) in self.cells.iter().enumerate() {
            let c = cell.centroid();
            let (r, col) = (c.y.floor() as usize, c.x.floor() as usize);
            pixel_cell[r * cols + col] = id;
            cell_pixel[id] = (r, col);
        }
        LatticeIndex {
            rows,
            cols,
            pixel_cell,
            cell_pixel,
        }
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, l: LineId) -> &Line {
        &self.lines[l]
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, s: SegmentId) -> &Segment {
        &self.segments[s]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: CellId) -> &Cell {
        &self.cells[c]
    }

    pub fn crossings(&self, l: LineId) -> &BoundaryCrossings {
        &self.crossings[l]
    }

    /// Segments of a line in chronological order.
    pub fn line_segments(&self, l: LineId) -> &[SegmentId] {
        &self.line_segments[l]
    }

    /// Entry points and interior nodes, sorted by time.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event_time(&self, i: usize) -> f64 {
        self.event_times[i]
    }

    /// Cells that no dynamic event from `i` on reads or writes.
    pub fn expiring_before(&self, i: usize) -> &[CellId] {
        &self.expiring[i]
    }

    /// Position of an event in the chronological order.
    pub fn event_index(&self, e: Event) -> usize {
        let t = match e {
            Event::Entry(l) => self.crossings[l].entry_time,
            Event::Node(n) => self.nodes[n].time,
        };
        self.event_times.partition_point(|&x| x < t)
    }

    pub fn lattice(&self) -> Option<&LatticeIndex> {
        self.lattice.as_ref()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Cell containing a point of the domain interior, by sign pattern.
    pub fn locate(&self, p: Point) -> Option<CellId> {
        if !self.domain.contains(p) {
            return None;
        }
        self.cells
            .iter()
            .position(|c| point_in_convex(&c.polygon, p))
    }
}

/// Chronological order of entry points and nodes.
pub fn chronological_events(t: &Tessellation) -> Vec<Event> {
    t.events().to_vec()
}

struct CellBuilder {
    origin: CellOrigin,
    points: Vec<Point>,
}

impl CellBuilder {
    fn new(origin: CellOrigin, p: Point) -> Self {
        CellBuilder {
            origin,
            points: vec![p],
        }
    }
}

fn intersection(l1: &Line, l2: &Line) -> Option<Point> {
    let det = l1.a * l2.b - l2.a * l1.b;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(Point::new(
        (l1.c * l2.b - l2.c * l1.b) / det,
        (l1.a * l2.c - l2.a * l1.c) / det,
    ))
}

/// Frame-independent checks: duplicates, domain misses, corners, boundary
/// nodes and concurrences.
fn check_static(lines: &[Line], domain: &Domain) -> Result<(), GeometryError> {
    for (i, l) in lines.iter().enumerate() {
        if !(l.activity > 0.0 && l.activity < 1.0) {
            return Err(GeometryError::BadActivity {
                line: i,
                activity: l.activity,
            });
        }
        let clip = domain.clip(l).ok_or(GeometryError::LineMissesDomain(i))?;
        if clip.hi - clip.lo <= GEOMETRY_TOLERANCE {
            return Err(GeometryError::LineMissesDomain(i));
        }
        for v in domain.vertices() {
            if l.signed_distance(*v).abs() <= GEOMETRY_TOLERANCE {
                return Err(GeometryError::LineThroughCorner(i));
            }
        }
    }
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let (li, lj) = (&lines[i], &lines[j]);
            match intersection(li, lj) {
                None => {
                    if (li.c - lj.c).abs() <= GEOMETRY_TOLERANCE {
                        return Err(GeometryError::DuplicateLine(i, j));
                    }
                }
                Some(p) => {
                    let d = domain.boundary_distance(p);
                    if d.abs() <= GEOMETRY_TOLERANCE {
                        return Err(GeometryError::NodeOnBoundary(i, j));
                    }
                    if d > 0.0 {
                        for (k, lk) in lines.iter().enumerate() {
                            if k != i && k != j && lk.signed_distance(p).abs() <= GEOMETRY_TOLERANCE
                            {
                                let mut ids = [i, j, k];
                                ids.sort_unstable();
                                return Err(GeometryError::ThreeConcurrentLines(
                                    ids[0], ids[1], ids[2],
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
    });
    pts.dedup_by(|a, b| a.distance(*b) <= GEOMETRY_TOLERANCE);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(a)) <= GEOMETRY_TOLERANCE * 1e-3 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn point_in_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    n >= 3
        && (0..n).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            b.sub(a).cross(p.sub(a)) >= -GEOMETRY_TOLERANCE
        })
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

pub fn polygon_centroid(poly: &[Point]) -> Point {
    let n = poly.len();
    let area = polygon_area(poly);
    if area.abs() < 1e-300 {
        let sx: f64 = poly.iter().map(|p| p.x).sum();
        let sy: f64 = poly.iter().map(|p| p.y).sum();
        return Point::new(sx / n as f64, sy / n as f64);
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let w = p.cross(q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    Point::new(cx / (6.0 * area), cy / (6.0 * area))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Domain {
        Domain::rectangle(0.0, 0.0, 10.0, 10.0).unwrap()
    }

    #[test]
    fn line_normal_form_is_canonical() {
        let l = Line::new(0, -3.0, -4.0, -10.0, 0.5).unwrap();
        assert!(
            (l.a - 0.6).abs() < 1e-15 && (l.b - 0.8).abs() < 1e-15 && (l.c - 2.0).abs() < 1e-15
        );
        let h = Line::new(1, 0.0, -2.0, -6.0, 0.5).unwrap();
        assert_eq!((h.a, h.b, h.c), (0.0, 1.0, 3.0));
        assert!(matches!(
            Line::new(2, 1.0, 0.0, 0.0, 1.0),
            Err(GeometryError::BadActivity { .. })
        ));
        assert!(matches!(
            Line::new(2, 0.0, 0.0, 0.0, 0.5),
            Err(GeometryError::DegenerateLine(2))
        ));
    }

    #[test]
    fn lattice_counts() {
        let t = build_lattice(2, 2, &[0.5, 0.5]).unwrap();
        assert_eq!((t.num_lines(), t.num_nodes(), t.num_cells()), (2, 1, 4));
        let t = build_lattice(1, 1, &[]).unwrap();
        assert_eq!((t.num_lines(), t.num_nodes(), t.num_cells()), (0, 0, 1));
        assert!(t.events().is_empty());
        let t = build_lattice(3, 3, &[0.5; 4]).unwrap();
        assert_eq!((t.num_lines(), t.num_nodes(), t.num_cells()), (4, 4, 9));
        assert_eq!(t.num_segments(), 12);
    }

    #[test]
    fn lattice_rejects_bad_input() {
        assert_eq!(
            build_lattice(0, 2, &[]).unwrap_err(),
            GeometryError::EmptyLattice
        );
        assert_eq!(
            build_lattice(2, 3, &[0.5]).unwrap_err(),
            GeometryError::ActivityCount {
                expected: 3,
                got: 1
            }
        );
        assert!(matches!(
            build_lattice(2, 2, &[0.5, 1.0]),
            Err(GeometryError::BadActivity { .. })
        ));
    }

    #[test]
    fn two_by_two_event_order() {
        let t = build_lattice(2, 2, &[0.5, 0.5]).unwrap();
        assert_eq!(
            t.events(),
            &[Event::Entry(0), Event::Entry(1), Event::Node(0)]
        );
        let n = t.node(0);
        // the vertical line enters from the low-s side and crosses the horizontal one
        assert_eq!(n.lines, (1, 0));
        let lat = t.lattice().unwrap();
        assert_eq!(n.before, lat.cell(0, 0));
        assert_eq!(n.lower, lat.cell(0, 1));
        assert_eq!(n.upper, lat.cell(1, 0));
        assert_eq!(n.after, lat.cell(1, 1));
    }

    #[test]
    fn lattice_nodes_follow_column_major_order() {
        let (rows, cols) = (4, 3);
        let t = build_uniform_lattice(rows, cols, 0.5).unwrap();
        let lat = t.lattice().unwrap();
        let created: Vec<(usize, usize)> = t
            .events()
            .iter()
            .filter_map(|e| match e {
                Event::Node(n) => Some(lat.pixel(t.node(*n).after)),
                Event::Entry(_) => None,
            })
            .collect();
        let mut expected = Vec::new();
        for c in 1..cols {
            for r in 1..rows {
                expected.push((r, c));
            }
        }
        assert_eq!(created, expected);
        // every pixel is created exactly once: the initial cell, entries or nodes
        assert_eq!(lat.pixel(0), (0, 0));
    }

    #[test]
    fn lattice_cells_are_unit_squares() {
        let t = build_uniform_lattice(3, 4, 0.3).unwrap();
        for cell in t.cells() {
            assert_eq!(cell.polygon.len(), 4);
            assert!((polygon_area(&cell.polygon) - 1.0).abs() < 1e-12);
        }
        let total: f64 = t.cells().iter().map(|c| polygon_area(&c.polygon)).sum();
        assert!((total - 12.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_three_concurrent_lines() {
        let d = Domain::rectangle(-5.0, -5.0, 5.0, 5.0).unwrap();
        let lines = vec![
            Line::new(0, 1.0, 0.2, 0.0, 0.5).unwrap(),
            Line::new(1, 0.3, 1.0, 0.0, 0.5).unwrap(),
            Line::new(2, 1.0, -0.7, 0.0, 0.5).unwrap(),
        ];
        assert_eq!(
            build_tessellation(lines, d).unwrap_err(),
            GeometryError::ThreeConcurrentLines(0, 1, 2)
        );
    }

    #[test]
    fn rejects_line_missing_domain() {
        let lines = vec![Line::new(0, 1.0, 0.1, 50.0, 0.5).unwrap()];
        assert_eq!(
            build_tessellation(lines, unit_square()).unwrap_err(),
            GeometryError::LineMissesDomain(0)
        );
    }

    #[test]
    fn rejects_node_on_boundary_and_corner() {
        let lines = vec![
            Line::new(0, 1.0, 0.0, 4.0, 0.5).unwrap(),
            Line::new(1, 1.0, 1.0, 4.0, 0.5).unwrap(),
        ];
        assert_eq!(
            build_tessellation(lines, unit_square()).unwrap_err(),
            GeometryError::NodeOnBoundary(0, 1)
        );
        let lines = vec![Line::new(0, 1.0, 1.0, 9.0, 0.5).unwrap()];
        assert!(build_tessellation(lines, unit_square()).is_ok());
        let lines = vec![Line::new(0, 1.0, -1.0, 0.0, 0.5).unwrap()];
        assert_eq!(
            build_tessellation(lines, unit_square()).unwrap_err(),
            GeometryError::LineThroughCorner(0)
        );
    }

    #[test]
    fn rejects_duplicates() {
        let lines = vec![
            Line::new(0, 1.0, 0.3, 4.0, 0.5).unwrap(),
            Line::new(1, -2.0, -0.6, -8.0, 0.2).unwrap(),
        ];
        assert_eq!(
            build_tessellation(lines, unit_square()).unwrap_err(),
            GeometryError::DuplicateLine(0, 1)
        );
    }

    #[test]
    fn oblique_family_without_rotation() {
        let lines = vec![
            Line::new(0, 0.3, 1.0, 3.0, 0.5).unwrap(),
            Line::new(1, -0.4, 1.0, 4.0, 0.4).unwrap(),
            Line::new(2, 0.2, 1.0, 7.0, 0.6).unwrap(),
        ];
        let d = Domain::polygon(vec![
            Point::new(0.0, 1.0),
            Point::new(5.0, -1.0),
            Point::new(11.0, 4.0),
            Point::new(6.0, 12.0),
        ])
        .unwrap();
        let t = build_tessellation(lines, d).unwrap();
        assert_eq!(t.frame().rotation, 0.0);
        // cells of an arrangement of L lines with N interior nodes inside a convex domain
        assert_eq!(t.num_cells(), 1 + t.num_lines() + t.num_nodes());
        let area: f64 = t.cells().iter().map(|c| polygon_area(&c.polygon)).sum();
        assert!((area - polygon_area(t.domain().vertices())).abs() < 1e-9);
    }

    #[test]
    fn segments_bound_their_cells() {
        let t = build_uniform_lattice(3, 3, 0.5).unwrap();
        for (sid, s) in t.segments().iter().enumerate() {
            assert_ne!(s.below, s.above);
            assert!(t.cell(s.below).segments.contains(&sid));
            assert!(t.cell(s.above).segments.contains(&sid));
            assert!((s.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn event_order_ignores_line_permutation() {
        let make = |order: &[usize]| {
            let base = [
                Line::new(10, 0.3, 1.0, 3.5, 0.5).unwrap(),
                Line::new(11, -0.4, 1.0, 4.0, 0.4).unwrap(),
                Line::new(12, 0.9, 0.2, 5.0, 0.6).unwrap(),
            ];
            let lines: Vec<Line> = order.iter().map(|&i| base[i]).collect();
            let t = build_tessellation(lines, unit_square()).unwrap();
            t.events()
                .iter()
                .map(|e| match *e {
                    Event::Entry(l) => vec![t.line(l).id],
                    Event::Node(n) => {
                        let (a, b) = t.node(n).lines;
                        let mut ids = vec![t.line(a).id, t.line(b).id];
                        ids.sort();
                        ids
                    }
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(make(&[0, 1, 2]), make(&[2, 0, 1]));
        assert_eq!(make(&[0, 1, 2]), make(&[1, 2, 0]));
    }

    #[test]
    fn locate_finds_pixel_cells() {
        let t = build_uniform_lattice(3, 4, 0.5).unwrap();
        let lat = t.lattice().unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let p = Point::new(c as f64 + 0.5, r as f64 + 0.5);
                assert_eq!(t.locate(p), Some(lat.cell(r, c)));
            }
        }
    }
}
