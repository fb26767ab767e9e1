//! Exhaustive enumeration on small tessellations.
//!
//! Every colouring of the cells is an admissible configuration, so the state
//! space is exactly `k^cells`. Lattice states are ordered as pixel arrays in
//! row-major mixed radix with the first pixel varying slowest.

use crate::geometry::{build_lattice, SegmentId, Tessellation};
use crate::model::{log_partition_function, GibbsModifier, LocalEnergy, ModelParams};
use crate::mosaic::{Colour, Mosaic, PixelArray};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("{states} states exceed the enumeration cap {cap}")]
    EnumerationTooLarge { states: f64, cap: usize },
    #[error("sub-rectangle {rows}x{cols} at ({row}, {col}) does not fit the lattice")]
    BadSubRectangle {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("distributions have {0} and {1} entries")]
    MismatchedSupports(usize, usize),
    #[error("tessellation is not a pixel lattice")]
    NotALattice,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Exact law of a configuration space.
#[derive(Debug, Clone)]
pub struct ExactTable {
    pub tess: Arc<Tessellation>,
    pub k: Colour,
    /// States as colours per site: pixels in row-major order for lattices,
    /// cells otherwise.
    pub states: Vec<Vec<Colour>>,
    pub log_weights: Vec<f64>,
    /// Normaliser obtained by summation.
    pub z: f64,
    /// Closed-form normaliser, when no modifier is present.
    pub z_closed: Option<f64>,
    pub probabilities: Vec<f64>,
}

impl ExactTable {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State as a pixel array (lattice tables only).
    pub fn pixels(&self, i: usize) -> Option<PixelArray> {
        let lat = self.tess.lattice()?;
        Some(PixelArray::new(lat.rows, lat.cols, self.states[i].clone()))
    }

    /// Cell colours of state `i`.
    pub fn cell_colours(&self, i: usize) -> Vec<Colour> {
        site_to_cells(&self.tess, &self.states[i])
    }

    pub fn mosaic(&self, i: usize) -> Mosaic {
        Mosaic::from_cell_colours(self.tess.clone(), self.k, self.cell_colours(i))
            .expect("enumerated state")
    }

    /// Position of a site colouring in the table.
    pub fn index_of_sites(&self, sites: &[Colour]) -> usize {
        mixed_radix_index(sites, self.k)
    }

    /// Position of a configuration in the table.
    pub fn index_of(&self, m: &Mosaic) -> usize {
        let sites = cells_to_sites(&self.tess, m.colours());
        mixed_radix_index(&sites, self.k)
    }

    pub fn sum_probabilities(&self) -> f64 {
        neumaier_sum(self.probabilities.iter().copied())
    }

    /// Probability that segment `s` carries an edge.
    pub fn segment_activity_probability(&self, s: SegmentId) -> f64 {
        let seg = self.tess.segment(s);
        neumaier_sum((0..self.len()).filter_map(|i| {
            let cells = self.cell_colours(i);
            (cells[seg.below] != cells[seg.above]).then_some(self.probabilities[i])
        }))
    }

    /// Columns `state,pixels,log_weight,probability,z`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state", "pixels", "log_weight", "probability", "z"])?;
        for i in 0..self.len() {
            let code = match self.pixels(i) {
                Some(p) => p.to_code(),
                None => self.states[i]
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            out.write_record([
                i.to_string(),
                code,
                format!("{:.17e}", self.log_weights[i]),
                format!("{:.17e}", self.probabilities[i]),
                // twelve significant digits, so 7.2 prints as 7.2
                format!(
                    "{}",
                    format!("{:.11e}", self.z)
                        .parse::<f64>()
                        .expect("formatted float")
                ),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn site_order(t: &Tessellation) -> Vec<usize> {
    match t.lattice() {
        Some(lat) => (0..lat.rows * lat.cols)
            .map(|i| lat.cell(i / lat.cols, i % lat.cols))
            .collect(),
        None => (0..t.num_cells()).collect(),
    }
}

fn site_to_cells(t: &Tessellation, sites: &[Colour]) -> Vec<Colour> {
    let order = site_order(t);
    let mut cells = vec![0; sites.len()];
    for (i, &c) in order.iter().enumerate() {
        cells[c] = sites[i];
    }
    cells
}

fn cells_to_sites(t: &Tessellation, cells: &[Colour]) -> Vec<Colour> {
    site_order(t).iter().map(|&c| cells[c]).collect()
}

fn mixed_radix_index(sites: &[Colour], k: Colour) -> usize {
    sites
        .iter()
        .fold(0usize, |acc, &c| acc * k as usize + (c as usize - 1))
}

fn decode(mut index: usize, n: usize, k: Colour) -> Vec<Colour> {
    let mut out = vec![1; n];
    for i in (0..n).rev() {
        out[i] = (index % k as usize) as Colour + 1;
        index /= k as usize;
    }
    out
}

/// Compensated summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn enumerate_exact(
    tess: Arc<Tessellation>,
    p: &ModelParams,
    modifier: Option<&dyn GibbsModifier>,
) -> Result<ExactTable, OracleError> {
    enumerate_exact_with_cap(tess, p, modifier, DEFAULT_STATE_CAP)
}

/// Full table of states, log-weights and probabilities.
pub fn enumerate_exact_with_cap(
    tess: Arc<Tessellation>,
    p: &ModelParams,
    modifier: Option<&dyn GibbsModifier>,
    cap: usize,
) -> Result<ExactTable, OracleError> {
    let n = tess.num_cells();
    let states_f = (p.k as f64).powi(n as i32);
    if states_f > cap as f64 {
        return Err(OracleError::EnumerationTooLarge {
            states: states_f,
            cap,
        });
    }
    let count = states_f as usize;
    let energy = LocalEnergy::new(tess.clone(), p);
    let order = site_order(&tess);
    const CHUNK: usize = 4096;
    let chunks: Vec<(Vec<Vec<Colour>>, Vec<f64>)> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(count);
            let mut m = Mosaic::monochrome(tess.clone(), p.k, 1).expect("valid k");
            let mut cells = vec![1; n];
            let mut states = Vec::with_capacity(end - start);
            let mut lw = Vec::with_capacity(end - start);
            for i in start..end {
                let sites = decode(i, n, p.k);
                for (j, &c) in order.iter().enumerate() {
                    cells[c] = sites[j];
                }
                m.set_colours(&cells);
                let mut w = energy.total(&m);
                if let Some(h) = modifier {
                    w -= h.evaluate(&m);
                }
                states.push(sites);
                lw.push(w);
            }
            (states, lw)
        })
        .collect();
    let mut states = Vec::with_capacity(count);
    let mut log_weights = Vec::with_capacity(count);
    for (s, w) in chunks {
        states.extend(s);
        log_weights.extend(w);
    }
    let z = neumaier_sum(log_weights.iter().map(|w| w.exp()));
    let probabilities = log_weights.iter().map(|w| w.exp() / z).collect();
    let z_closed = modifier
        .is_none()
        .then(|| log_partition_function(&tess, p).exp());
    Ok(ExactTable {
        tess,
        k: p.k,
        states,
        log_weights,
        z,
        z_closed,
        probabilities,
    })
}

/// Lattice with the given line activities, enumerated.
pub fn enumerate_lattice(
    rows: usize,
    cols: usize,
    activities: &[f64],
    p: &ModelParams,
    modifier: Option<&dyn GibbsModifier>,
) -> Result<ExactTable, OracleError> {
    let t = Arc::new(build_lattice(rows, cols, activities)?);
    enumerate_exact(t, p, modifier)
}

/// Exact law of the pixels in a sub-rectangle.
///
/// The result lives on the sub-lattice built from the surviving lines, so it
/// can be compared state by state with a direct enumeration there.
pub fn marginal(
    table: &ExactTable,
    row: usize,
    col: usize,
    rows: usize,
    cols: usize,
) -> Result<ExactTable, OracleError> {
    let lat = table.tess.lattice().ok_or(OracleError::NotALattice)?;
    if rows == 0 || cols == 0 || row + rows > lat.rows || col + cols > lat.cols {
        return Err(OracleError::BadSubRectangle {
            row,
            col,
            rows,
            cols,
        });
    }
    let mut activities = Vec::with_capacity(rows + cols - 2);
    for r in row..row + rows - 1 {
        activities.push(table.tess.line(lat.horizontal_line(r)).activity);
    }
    for c in col..col + cols - 1 {
        activities.push(table.tess.line(lat.vertical_line(c)).activity);
    }
    let sub = Arc::new(build_lattice(rows, cols, &activities)?);
    let count = (table.k as usize).pow((rows * cols) as u32);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); count];
    for i in 0..table.len() {
        let p = PixelArray::new(lat.rows, lat.cols, table.states[i].clone())
            .sub_array(row, col, rows, cols);
        buckets[mixed_radix_index(&p.data, table.k)].push(table.probabilities[i]);
    }
    let probabilities: Vec<f64> = buckets.into_iter().map(neumaier_sum).collect();
    Ok(ExactTable {
        tess: sub,
        k: table.k,
        states: (0..count)
            .map(|i| decode(i, rows * cols, table.k))
            .collect(),
        log_weights: probabilities.iter().map(|p| p.ln()).collect(),
        z: 1.0,
        z_closed: None,
        probabilities,
    })
}

/// Half the L1 distance between two distributions on the same support.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::MismatchedSupports(a.len(), b.len()));
    }
    Ok(0.5 * neumaier_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs())))
}

/// Conditional law of an interior pixel given its diagonal (`u`), left
/// (`v`) and upper (`w`) neighbours. `pi_h` is the activity of the
/// horizontal line above the pixel, `pi_v` that of the vertical line to its
/// left.
pub fn interior_conditional(
    p: &ModelParams,
    pi_h: f64,
    pi_v: f64,
    x: Colour,
    u: Colour,
    v: Colour,
    w: Colour,
) -> f64 {
    let km1 = p.km1();
    if u == v && v == w {
        let birth = p.alpha_v * pi_h * pi_v / km1;
        if x == u {
            1.0 - birth
        } else {
            birth / km1
        }
    } else if u == v {
        // a trajectory arrives along the vertical line; it may turn onto the horizontal one
        if x == w {
            1.0 - p.epsilon * pi_h
        } else if x == u {
            p.alpha_v * pi_h / km1
        } else {
            p.alpha_t * pi_h / km1
        }
    } else if u == w {
        if x == v {
            1.0 - p.epsilon * pi_v
        } else if x == u {
            p.alpha_v * pi_v / km1
        } else {
            p.alpha_t * pi_v / km1
        }
    } else if v == w {
        if x == v {
            p.alpha_v
        } else {
            p.alpha_x / km1
        }
    } else if x == v || x == w {
        p.alpha_t
    } else {
        p.alpha_x / km1
    }
}

/// Conditional law of a first-row or first-column pixel given its
/// predecessor, across a line of activity `pi`.
pub fn boundary_conditional(p: &ModelParams, pi: f64, x: Colour, prev: Colour) -> f64 {
    if x == prev {
        1.0 / (1.0 + pi)
    } else {
        pi / (1.0 + pi) / p.km1()
    }
}

/// Product of causal conditionals in column-major order.
pub fn factorised_probability(pixels: &PixelArray, activities: &[f64], p: &ModelParams) -> f64 {
    let (rows, cols) = (pixels.rows, pixels.cols);
    let pi_h = |r: usize| activities[r];
    let pi_v = |c: usize| activities[rows - 1 + c];
    let mut prob = 1.0 / p.k as f64;
    for r in 1..rows {
        prob *= boundary_conditional(p, pi_h(r - 1), pixels.get(r, 0), pixels.get(r - 1, 0));
    }
    for c in 1..cols {
        prob *= boundary_conditional(p, pi_v(c - 1), pixels.get(0, c), pixels.get(0, c - 1));
        for r in 1..rows {
            let u = pixels.get(r - 1, c - 1);
            let v = pixels.get(r, c - 1);
            let w = pixels.get(r - 1, c);
            prob *= interior_conditional(p, pi_h(r - 1), pi_v(c - 1), pixels.get(r, c), u, v, w);
        }
    }
    prob
}

/// Largest absolute difference between the causal product and the exact
/// probability over all states of the lattice.
pub fn factorisation_check(
    rows: usize,
    cols: usize,
    activities: &[f64],
    p: &ModelParams,
) -> Result<f64, OracleError> {
    let table = enumerate_lattice(rows, cols, activities, p, None)?;
    let mut worst = 0.0f64;
    for i in 0..table.len() {
        let pix = table.pixels(i).expect("lattice table");
        worst =
            worst.max((factorised_probability(&pix, activities, p) - table.probabilities[i]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_uniform_lattice;
    use crate::model::{derive_params, log_weight};
    use approx::assert_relative_eq;

    #[test]
    fn two_by_two_table() {
        let p = derive_params(3, 0.5).unwrap();
        let t = enumerate_lattice(2, 2, &[0.5, 0.5], &p, None).unwrap();
        assert_eq!(t.len(), 81);
        assert_relative_eq!(t.z, 7.2, epsilon = 1e-12);
        assert_relative_eq!(t.z_closed.unwrap(), 7.2, epsilon = 1e-12);
        assert_relative_eq!(t.sum_probabilities(), 1.0, epsilon = 1e-14);
        let mono = t.index_of_sites(&[1, 1, 1, 1]);
        assert_relative_eq!(t.probabilities[mono], 5.0 / 36.0, epsilon = 1e-14);
    }

    #[test]
    fn single_pixel_is_uniform() {
        let p = derive_params(4, 0.5).unwrap();
        let t = enumerate_lattice(1, 1, &[], &p, None).unwrap();
        assert_eq!(t.len(), 4);
        for q in &t.probabilities {
            assert_relative_eq!(*q, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_colour_checkerboards_vanish() {
        let p = derive_params(2, 1.0).unwrap();
        let t = enumerate_lattice(2, 2, &[0.5, 0.5], &p, None).unwrap();
        assert_eq!(t.probabilities[t.index_of_sites(&[1, 2, 2, 1])], 0.0);
        assert_eq!(t.probabilities[t.index_of_sites(&[2, 1, 1, 2])], 0.0);
        assert_relative_eq!(t.z, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn local_and_statistical_weights_agree() {
        let p = derive_params(3, 0.25).unwrap();
        let t = enumerate_lattice(3, 2, &[0.3, 0.7, 0.5], &p, None).unwrap();
        for i in 0..t.len() {
            assert_relative_eq!(
                t.log_weights[i],
                log_weight(&t.mosaic(i), &p),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn enumeration_cap() {
        let p = derive_params(4, 0.5).unwrap();
        let t = Arc::new(build_uniform_lattice(4, 4, 0.5).unwrap());
        assert!(matches!(
            enumerate_exact(t, &p, None),
            Err(OracleError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn marginal_onto_column() {
        let p = derive_params(3, 0.5).unwrap();
        let full = enumerate_lattice(2, 2, &[0.4, 0.6], &p, None).unwrap();
        let left = marginal(&full, 0, 0, 2, 1).unwrap();
        let direct = enumerate_lattice(2, 1, &[0.4], &p, None).unwrap();
        assert!(tv_distance(&left.probabilities, &direct.probabilities).unwrap() < 1e-14);
        let same = marginal(&full, 0, 0, 2, 2).unwrap();
        for (a, b) in same.probabilities.iter().zip(&full.probabilities) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let pixel = marginal(&full, 1, 1, 1, 1).unwrap();
        for q in &pixel.probabilities {
            assert_relative_eq!(*q, 1.0 / 3.0, epsilon = 1e-14);
        }
        assert!(matches!(
            marginal(&full, 1, 0, 2, 1),
            Err(OracleError::BadSubRectangle { .. })
        ));
    }

    #[test]
    fn tv_distance_examples() {
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            tv_distance(&[0.25; 4], &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            0.75
        );
        assert_eq!(
            tv_distance(&[1.0], &[0.5, 0.5]),
            Err(OracleError::MismatchedSupports(1, 2))
        );
    }

    #[test]
    fn factorisation_on_small_lattices() {
        let p = derive_params(3, 0.5).unwrap();
        assert!(factorisation_check(2, 2, &[0.5, 0.5], &p).unwrap() < 1e-12);
        let p = derive_params(2, 1.0).unwrap();
        assert!(factorisation_check(3, 2, &[0.5, 0.5, 0.5], &p).unwrap() < 1e-12);
    }

    #[test]
    fn interior_birth_conditional() {
        let p = derive_params(3, 0.5).unwrap();
        assert_relative_eq!(
            interior_conditional(&p, 0.3, 0.6, 2, 2, 2, 2),
            1.0 - 0.5 * 0.3 * 0.6 / 2.0
        );
        let total: f64 = (1..=3)
            .map(|x| interior_conditional(&p, 0.3, 0.6, x, 2, 2, 2))
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn csv_export() {
        let p = derive_params(2, 0.5).unwrap();
        let t = enumerate_lattice(1, 2, &[0.5], &p, None).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "state,pixels,log_weight,probability,z");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,12,"));
    }
}
