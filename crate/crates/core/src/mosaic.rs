//! Coloured polygonal configurations on a tessellation.
//!
//! A configuration is stored dually: one colour per tessellation cell plus
//! the set of active segments (the segments carrying an edge of the graph).
//! Faces of the configuration are unions of cells of equal colour that are
//! not separated by active segments.

use crate::geometry::{CellId, LineId, NodeId, SegmentEnd, SegmentId, Tessellation};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Colour label in `1..=k`.
pub type Colour = u8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MosaicError {
    #[error("expected {expected} cell colours, got {got}")]
    CellCount { expected: usize, got: usize },
    #[error("expected {expected} segment flags, got {got}")]
    SegmentCount { expected: usize, got: usize },
    #[error("colour {colour} outside 1..={k}")]
    ColourOutOfRange { colour: Colour, k: Colour },
    #[error("need at least two colours, got {0}")]
    TooFewColours(Colour),
    #[error("pixel array is {rows}x{cols} but the lattice is {lattice_rows}x{lattice_cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        lattice_rows: usize,
        lattice_cols: usize,
    },
    #[error("tessellation is not a pixel lattice")]
    NotALattice,
    #[error("vertex degree {0} is not admissible")]
    BadDegree(usize),
    #[error("configuration is not admissible: {0:?}")]
    AdmissibilityViolation(Vec<Violation>),
}

/// A rectangular array of pixel colours, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Colour>,
}

impl PixelArray {
    pub fn new(rows: usize, cols: usize, data: Vec<Colour>) -> Self {
        assert_eq!(data.len(), rows * cols, "pixel data length");
        PixelArray { rows, cols, data }
    }

    pub fn constant(rows: usize, cols: usize, colour: Colour) -> Self {
        PixelArray {
            rows,
            cols,
            data: vec![colour; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Colour {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, colour: Colour) {
        self.data[r * self.cols + c] = colour;
    }

    /// Rows of digits separated by `/`, e.g. `12/21`.
    pub fn to_code(&self) -> String {
        let mut s = String::with_capacity(self.data.len() + self.rows);
        for r in 0..self.rows {
            if r > 0 {
                s.push('/');
            }
            for c in 0..self.cols {
                let v = self.get(r, c);
                if v < 10 {
                    s.push(char::from(b'0' + v));
                } else {
                    s.push_str(&format!("({v})"));
                }
            }
        }
        s
    }

    pub fn sub_array(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> PixelArray {
        let mut data = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + cols]);
        }
        PixelArray { rows, cols, data }
    }
}

/// An admissible-or-not coloured configuration; see [`Mosaic::validate`].
#[derive(Debug, Clone)]
pub struct Mosaic {
    tess: Arc<Tessellation>,
    k: Colour,
    colours: Vec<Colour>,
    active: Vec<bool>,
}

/// Equal colourings on the same tessellation instance.
impl PartialEq for Mosaic {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.tess, &other.tess)
            && self.k == other.k
            && self.colours == other.colours
            && self.active == other.active
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Interior node with one or more than four incident active segments.
    BadDegree {
        node: NodeId,
        degree: usize,
    },
    /// Active segment with equal colours on both sides.
    AdjacentSameColour {
        segment: SegmentId,
    },
    /// Inactive segment separating different colours.
    UnseparatedColours {
        segment: SegmentId,
    },
    ColourOutOfRange {
        cell: CellId,
        colour: Colour,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    V,
    T,
    X,
}

impl VertexKind {
    /// Kind of an interior vertex of the given degree.
    pub fn from_degree(degree: usize) -> Result<Self, MosaicError> {
        match degree {
            2 => Ok(VertexKind::V),
            3 => Ok(VertexKind::T),
            4 => Ok(VertexKind::X),
            d => Err(MosaicError::BadDegree(d)),
        }
    }
}

/// How the configuration looks at a single node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeShape {
    /// No active segment.
    Empty,
    /// One line passes straight through; the crossing line is inactive here.
    Through(LineId),
    Vertex(VertexKind),
    /// Degree one: never admissible.
    Dangling,
}

/// A maximal run of consecutive active segments on one line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub line: LineId,
    pub segments: Vec<SegmentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicStats {
    pub n_v: usize,
    pub n_t: usize,
    pub n_x: usize,
    /// Degree-one vertices on the domain boundary.
    pub n_boundary: usize,
    /// Runs broken at T- and X-vertices.
    pub edges: Vec<Edge>,
    /// Runs broken only where the line leaves the graph.
    pub primary_edges: Vec<Edge>,
    /// Nodes on the graph: vertices and pass-through points.
    pub nodes_on_gamma: Vec<NodeId>,
    /// Crossing nodes strictly inside each edge, aligned with `edges`.
    pub edge_crossings: Vec<Vec<NodeId>>,
}

impl MosaicStats {
    pub fn interior_vertices(&self) -> usize {
        self.n_v + self.n_t + self.n_x
    }

    pub fn active_segments(&self) -> usize {
        self.edges.iter().map(|e| e.segments.len()).sum()
    }
}

impl Mosaic {
    /// Configuration induced by a cell colouring. Always admissible.
    pub fn from_cell_colours(
        tess: Arc<Tessellation>,
        k: Colour,
        colours: Vec<Colour>,
    ) -> Result<Self, MosaicError> {
        if k < 2 {
            return Err(MosaicError::TooFewColours(k));
        }
        if colours.len() != tess.num_cells() {
            return Err(MosaicError::CellCount {
                expected: tess.num_cells(),
                got: colours.len(),
            });
        }
        if let Some(&colour) = colours.iter().find(|&&c| c == 0 || c > k) {
            return Err(MosaicError::ColourOutOfRange { colour, k });
        }
        let active = tess
            .segments()
            .iter()
            .map(|s| colours[s.below] != colours[s.above])
            .collect();
        Ok(Mosaic {
            tess,
            k,
            colours,
            active,
        })
    }

    /// Raw constructor; the result may violate admissibility.
    pub fn from_parts(
        tess: Arc<Tessellation>,
        k: Colour,
        colours: Vec<Colour>,
        active: Vec<bool>,
    ) -> Result<Self, MosaicError> {
        if colours.len() != tess.num_cells() {
            return Err(MosaicError::CellCount {
                expected: tess.num_cells(),
                got: colours.len(),
            });
        }
        if active.len() != tess.num_segments() {
            return Err(MosaicError::SegmentCount {
                expected: tess.num_segments(),
                got: active.len(),
            });
        }
        Ok(Mosaic {
            tess,
            k,
            colours,
            active,
        })
    }

    pub fn monochrome(
        tess: Arc<Tessellation>,
        k: Colour,
        colour: Colour,
    ) -> Result<Self, MosaicError> {
        let n = tess.num_cells();
        Mosaic::from_cell_colours(tess, k, vec![colour; n])
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    pub fn tessellation_arc(&self) -> &Arc<Tessellation> {
        &self.tess
    }

    pub fn k(&self) -> Colour {
        self.k
    }

    pub fn colours(&self) -> &[Colour] {
        &self.colours
    }

    pub fn colour(&self, c: CellId) -> Colour {
        self.colours[c]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, s: SegmentId) -> bool {
        self.active[s]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Recolours one cell and refreshes the flags of its segments.
    pub fn set_colour(&mut self, cell: CellId, colour: Colour) {
        self.colours[cell] = colour;
        for &s in &self.tess.cell(cell).segments {
            let seg = self.tess.segment(s);
            self.active[s] = self.colours[seg.below] != self.colours[seg.above];
        }
    }

    /// Replaces the whole colouring.
    pub fn set_colours(&mut self, colours: &[Colour]) {
        self.colours.copy_from_slice(colours);
        for (s, seg) in self.tess.segments().iter().enumerate() {
            self.active[s] = colours[seg.below] != colours[seg.above];
        }
    }

    pub fn node_degree(&self, n: NodeId) -> usize {
        let node = self.tess.node(n);
        [node.in_below, node.in_above, node.out_below, node.out_above]
            .iter()
            .filter(|&&s| self.active[s])
            .count()
    }

    pub fn node_shape(&self, n: NodeId) -> NodeShape {
        let node = self.tess.node(n);
        let a = |s| self.active[s];
        // the line `lines.0` carries in_below and out_above; `lines.1` the other two
        let p = (a(node.in_below), a(node.out_above));
        let q = (a(node.in_above), a(node.out_below));
        match (p, q) {
            ((false, false), (false, false)) => NodeShape::Empty,
            ((true, true), (false, false)) => NodeShape::Through(node.lines.0),
            ((false, false), (true, true)) => NodeShape::Through(node.lines.1),
            _ => match self.node_degree(n) {
                1 => NodeShape::Dangling,
                d => VertexKind::from_degree(d)
                    .map(NodeShape::Vertex)
                    .unwrap_or(NodeShape::Dangling),
            },
        }
    }

    /// All admissibility violations; empty when the configuration is admissible.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (cell, &colour) in self.colours.iter().enumerate() {
            if colour == 0 || colour > self.k {
                out.push(Violation::ColourOutOfRange { cell, colour });
            }
        }
        for n in 0..self.tess.num_nodes() {
            let degree = self.node_degree(n);
            if degree == 1 || degree > 4 {
                out.push(Violation::BadDegree { node: n, degree });
            }
        }
        for (s, seg) in self.tess.segments().iter().enumerate() {
            let same = self.colours[seg.below] == self.colours[seg.above];
            if self.active[s] && same {
                out.push(Violation::AdjacentSameColour { segment: s });
            }
            if !self.active[s] && !same {
                out.push(Violation::UnseparatedColours { segment: s });
            }
        }
        out
    }

    pub fn is_admissible(&self) -> bool {
        self.validate().is_empty()
    }

    /// Vertex counts, edges, primary edges and graph nodes.
    pub fn analyze(&self) -> Result<MosaicStats, MosaicError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(MosaicError::AdmissibilityViolation(violations));
        }
        let t = &*self.tess;
        let mut stats = MosaicStats {
            n_v: 0,
            n_t: 0,
            n_x: 0,
            n_boundary: 0,
            edges: Vec::new(),
            primary_edges: Vec::new(),
            nodes_on_gamma: Vec::new(),
            edge_crossings: Vec::new(),
        };
        for n in 0..t.num_nodes() {
            match self.node_shape(n) {
                NodeShape::Empty => continue,
                NodeShape::Through(_) => {}
                NodeShape::Vertex(VertexKind::V) => stats.n_v += 1,
                NodeShape::Vertex(VertexKind::T) => stats.n_t += 1,
                NodeShape::Vertex(VertexKind::X) => stats.n_x += 1,
                NodeShape::Dangling => unreachable!("validated"),
            }
            stats.nodes_on_gamma.push(n);
        }
        for l in 0..t.num_lines() {
            let segs = t.line_segments(l);
            if let (Some(&first), Some(&last)) = (segs.first(), segs.last()) {
                stats.n_boundary += self.active[first] as usize + self.active[last] as usize;
            }
            let mut primary: Vec<SegmentId> = Vec::new();
            let mut edge: Vec<SegmentId> = Vec::new();
            let mut crossings: Vec<NodeId> = Vec::new();
            for &s in segs {
                if !self.active[s] {
                    if !primary.is_empty() {
                        stats.primary_edges.push(Edge {
                            line: l,
                            segments: std::mem::take(&mut primary),
                        });
                        stats.edges.push(Edge {
                            line: l,
                            segments: std::mem::take(&mut edge),
                        });
                        stats.edge_crossings.push(std::mem::take(&mut crossings));
                    }
                    continue;
                }
                if !edge.is_empty() {
                    if let SegmentEnd::Node(n) = t.segment(s).tail {
                        if self.node_degree(n) >= 3 {
                            stats.edges.push(Edge {
                                line: l,
                                segments: std::mem::take(&mut edge),
                            });
                            stats.edge_crossings.push(std::mem::take(&mut crossings));
                        } else {
                            crossings.push(n);
                        }
                    }
                }
                edge.push(s);
                primary.push(s);
            }
            if !primary.is_empty() {
                stats.primary_edges.push(Edge {
                    line: l,
                    segments: primary,
                });
                stats.edges.push(Edge {
                    line: l,
                    segments: edge,
                });
                stats.edge_crossings.push(crossings);
            }
        }
        Ok(stats)
    }
}

/// Configuration dual to a pixel array on a lattice tessellation.
pub fn pixels_to_mosaic(
    pixels: &PixelArray,
    tess: Arc<Tessellation>,
    k: Colour,
) -> Result<Mosaic, MosaicError> {
    let lat = tess.lattice().ok_or(MosaicError::NotALattice)?;
    if lat.rows != pixels.rows || lat.cols != pixels.cols {
        return Err(MosaicError::DimensionMismatch {
            rows: pixels.rows,
            cols: pixels.cols,
            lattice_rows: lat.rows,
            lattice_cols: lat.cols,
        });
    }
    let mut colours = vec![0; tess.num_cells()];
    for r in 0..pixels.rows {
        for c in 0..pixels.cols {
            colours[lat.cell(r, c)] = pixels.get(r, c);
        }
    }
    Mosaic::from_cell_colours(tess, k, colours)
}

pub fn mosaic_to_pixels(m: &Mosaic) -> Result<PixelArray, MosaicError> {
    let lat = m.tessellation().lattice().ok_or(MosaicError::NotALattice)?;
    let mut p = PixelArray::constant(lat.rows, lat.cols, 0);
    for r in 0..lat.rows {
        for c in 0..lat.cols {
            p.set(r, c, m.colour(lat.cell(r, c)));
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_uniform_lattice;

    fn lattice(rows: usize, cols: usize) -> Arc<Tessellation> {
        Arc::new(build_uniform_lattice(rows, cols, 0.5).unwrap())
    }

    fn mosaic(rows: usize, cols: usize, data: &[Colour], k: Colour) -> Mosaic {
        pixels_to_mosaic(
            &PixelArray::new(rows, cols, data.to_vec()),
            lattice(rows, cols),
            k,
        )
        .unwrap()
    }

    #[test]
    fn monochrome_has_no_graph() {
        let m = mosaic(2, 2, &[2, 2, 2, 2], 3);
        assert_eq!(m.active_count(), 0);
        let s = m.analyze().unwrap();
        assert_eq!((s.n_v, s.n_t, s.n_x, s.edges.len()), (0, 0, 0, 0));
        assert!(s.nodes_on_gamma.is_empty());
    }

    #[test]
    fn checkerboard_has_one_x_vertex() {
        let m = mosaic(2, 2, &[1, 2, 2, 1], 3);
        assert_eq!(m.active_count(), 4);
        let s = m.analyze().unwrap();
        assert_eq!((s.n_v, s.n_t, s.n_x), (0, 0, 1));
        assert_eq!(s.edges.len(), 4);
        assert_eq!(s.primary_edges.len(), 2);
        assert_eq!(s.n_boundary, 4);
    }

    #[test]
    fn column_split_has_one_edge() {
        let m = mosaic(2, 2, &[1, 2, 1, 2], 3);
        let s = m.analyze().unwrap();
        assert_eq!((s.n_v, s.n_t, s.n_x), (0, 0, 0));
        assert_eq!(s.edges.len(), 1);
        assert_eq!(s.primary_edges.len(), 1);
        assert_eq!(s.nodes_on_gamma, vec![0]);
        assert_eq!(s.edge_crossings, vec![vec![0]]);
        assert_eq!(s.edges[0].line, 1);
    }

    #[test]
    fn t_vertex_breaks_edges_but_not_primary_edges() {
        // top row split by colour, bottom row uniform: a T at the centre
        let m = mosaic(2, 2, &[1, 2, 3, 3], 3);
        let s = m.analyze().unwrap();
        assert_eq!((s.n_v, s.n_t, s.n_x), (0, 1, 0));
        assert_eq!(s.edges.len(), 3);
        assert_eq!(s.primary_edges.len(), 2);
        assert_eq!(s.active_segments(), 3);
    }

    #[test]
    fn corner_pixel_gives_v_vertex() {
        let m = mosaic(2, 2, &[1, 1, 1, 2], 2);
        let s = m.analyze().unwrap();
        assert_eq!((s.n_v, s.n_t, s.n_x), (1, 0, 0));
        assert_eq!(s.edges.len(), 2);
    }

    #[test]
    fn round_trip_pixels() {
        let p = PixelArray::new(2, 3, vec![1, 2, 3, 3, 1, 2]);
        let m = pixels_to_mosaic(&p, lattice(2, 3), 3).unwrap();
        assert_eq!(mosaic_to_pixels(&m).unwrap(), p);
        assert_eq!(p.to_code(), "123/312");
    }

    #[test]
    fn validate_reports_violations() {
        let t = lattice(2, 2);
        let n = t.num_segments();
        let node = t.node(0).clone();
        let mut active = vec![false; n];
        active[node.in_below] = true;
        let m = Mosaic::from_parts(t.clone(), 3, vec![1; 4], active).unwrap();
        let v = m.validate();
        assert!(v.contains(&Violation::BadDegree { node: 0, degree: 1 }));
        assert!(v.contains(&Violation::AdjacentSameColour {
            segment: node.in_below
        }));

        let mut colours = vec![1; 4];
        colours[node.after] = 2;
        let m = Mosaic::from_parts(t.clone(), 3, colours, vec![false; n]).unwrap();
        assert_eq!(m.validate().len(), 2);
        assert!(matches!(
            m.validate()[0],
            Violation::UnseparatedColours { .. }
        ));

        let m = Mosaic::from_parts(t, 3, vec![4, 1, 1, 1], vec![false; n]).unwrap();
        assert!(m
            .validate()
            .contains(&Violation::ColourOutOfRange { cell: 0, colour: 4 }));
    }

    #[test]
    fn degree_five_is_rejected() {
        assert_eq!(VertexKind::from_degree(5), Err(MosaicError::BadDegree(5)));
        assert_eq!(VertexKind::from_degree(1), Err(MosaicError::BadDegree(1)));
        assert_eq!(VertexKind::from_degree(3), Ok(VertexKind::T));
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = lattice(2, 2);
        assert!(matches!(
            Mosaic::from_cell_colours(t.clone(), 3, vec![1; 3]),
            Err(MosaicError::CellCount { .. })
        ));
        assert!(matches!(
            Mosaic::from_cell_colours(t.clone(), 3, vec![0; 4]),
            Err(MosaicError::ColourOutOfRange { .. })
        ));
        assert!(matches!(
            Mosaic::from_cell_colours(t.clone(), 1, vec![1; 4]),
            Err(MosaicError::TooFewColours(1))
        ));
        let p = PixelArray::constant(3, 2, 1);
        assert!(matches!(
            pixels_to_mosaic(&p, t, 3),
            Err(MosaicError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn set_colour_keeps_duality() {
        let mut m = mosaic(3, 3, &[1; 9], 3);
        let lat = m.tessellation().lattice().unwrap().clone();
        m.set_colour(lat.cell(1, 1), 2);
        assert!(m.is_admissible());
        assert_eq!(m.active_count(), 4);
        let s = m.analyze().unwrap();
        assert_eq!(s.n_v, 4);
    }
}
