//! Linear network extraction from grey-level images.
//!
//! The pipeline smooths the image, accumulates gradient magnitude in a Hough
//! array, turns the strongest bins into a regular line family and anneals a
//! mosaic on that family under a gradient-flux energy.

use crate::geometry::{
    build_tessellation, Domain, GeometryError, Line, Point, Tessellation, GEOMETRY_TOLERANCE,
};
use crate::mcmc::{anneal, AnnealSchedule, ChainState, McmcError, TraceRow};
use crate::model::{derive_params, GibbsModifier, ModelError};
use crate::mosaic::Mosaic;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("image must be at least 2x2 pixels, got {width}x{height}")]
    DegenerateImage { width: usize, height: usize },
    #[error("image has a non-finite intensity at pixel ({x}, {y})")]
    NonFiniteIntensity { x: usize, y: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("smoothing scale must be positive, got {0}")]
    BadSigma(f64),
    #[error("hough array needs positive dimensions and line counts")]
    BadBins,
    #[error("hough accumulator is empty")]
    NoAccumulatorMass,
    #[error("could not regularise the line family: {0}")]
    IrreparableDegeneracy(String),
    #[error("flux parameters must be positive and finite (beta {beta}, c {c})")]
    BadFluxParameters { beta: f64, c: f64 },
    #[error("segment {0} leaves the image")]
    EdgeOutsideImage(usize),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl ExtractError {
    fn stage<E: std::error::Error + Send + Sync + 'static>(
        stage: &'static str,
    ) -> impl FnOnce(E) -> ExtractError {
        move |e| ExtractError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

/// Row-major grey-level image. Pixel `(x, y)` covers `[x, x+1] × [y, y+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ExtractError> {
        if data.len() != width * height {
            return Err(ExtractError::BufferSize {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ExtractError::NonFiniteIntensity {
                x: i % width.max(1),
                y: i / width.max(1),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, ExtractError> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        GrayImage::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn scaled(&self, factor: f64) -> GrayImage {
        GrayImage {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// The rectangle covered by the pixels.
    pub fn domain(&self) -> Domain {
        Domain::rectangle(0.0, 0.0, self.width as f64, self.height as f64).expect("nonempty image")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub sigma: f64,
}

impl GradientField {
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        self.gx[i].hypot(self.gy[i])
    }

    /// Bilinear interpolation between pixel centres, clamped at the border.
    pub fn sample(&self, p: Point) -> (f64, f64) {
        let u = (p.x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (p.y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let lerp = |g: &[f64]| {
            let top = g[y0 * self.width + x0] * (1.0 - fx) + g[y0 * self.width + x1] * fx;
            let bottom = g[y1 * self.width + x0] * (1.0 - fx) + g[y1 * self.width + x1] * fx;
            top * (1.0 - fy) + bottom * fy
        };
        (lerp(&self.gx), lerp(&self.gy))
    }
}

/// Normalised Gaussian taps on `[-r, r]` with `r = ⌈4σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Mirror an index into `0..n` (edge pixels repeated).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian smoothing with reflected borders.
pub fn smooth(img: &GrayImage, sigma: f64) -> Result<GrayImage, ExtractError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ExtractError::BadSigma(sigma));
    }
    let (w, h) = (img.width, img.height);
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as i64;
    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let src = &img.data[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * src[reflect(x as i64 + j as i64 - r, w)])
                .sum();
        }
    });
    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        for (x, o) in out.iter_mut().enumerate() {
            *o = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * rows[reflect(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    });
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

/// Gaussian smoothing followed by central differences (one-sided at the border).
pub fn gradient_field(img: &GrayImage, sigma: f64) -> Result<GradientField, ExtractError> {
    let (w, h) = (img.width, img.height);
    if w < 2 || h < 2 {
        return Err(ExtractError::DegenerateImage {
            width: w,
            height: h,
        });
    }
    let s = smooth(img, sigma)?;
    let at = |x: usize, y: usize| s.data[y * w + x];
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    gx.par_chunks_mut(w)
        .zip(gy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
                rx[x] = diff(at(x0, y), at(x1, y), x1 - x0);
                ry[x] = diff(at(x, y0), at(x, y1), y1 - y0);
            }
        });
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        sigma,
    })
}

/// Magnitude-weighted Hough votes over `(offset, angle)`.
///
/// Angle bin `j` is `θ = jπ/n_theta`; offsets are measured from the image
/// centre and span half the diagonal either way.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughAccumulator {
    pub rho_bins: usize,
    pub theta_bins: usize,
    pub rho_max: f64,
    pub centre: Point,
    /// Votes indexed `[rho * theta_bins + theta]`.
    pub votes: Vec<f64>,
}

impl HoughAccumulator {
    pub fn accumulate(
        grad: &GradientField,
        rho_bins: usize,
        theta_bins: usize,
    ) -> Result<Self, ExtractError> {
        if rho_bins == 0 || theta_bins == 0 {
            return Err(ExtractError::BadBins);
        }
        let (w, h) = (grad.width, grad.height);
        let centre = Point::new(w as f64 / 2.0, h as f64 / 2.0);
        let rho_max = (w as f64).hypot(h as f64) / 2.0;
        let trig: Vec<(f64, f64)> = (0..theta_bins)
            .map(|j| {
                let th = j as f64 * std::f64::consts::PI / theta_bins as f64;
                (th.cos(), th.sin())
            })
            .collect();
        let bin = |rho: f64| {
            (((rho + rho_max) / (2.0 * rho_max) * rho_bins as f64).floor() as usize)
                .min(rho_bins - 1)
        };
        let votes = (0..h)
            .into_par_iter()
            .fold(
                || vec![0.0; rho_bins * theta_bins],
                |mut acc, y| {
                    for x in 0..w {
                        let m = grad.magnitude(x, y);
                        if m == 0.0 {
                            continue;
                        }
                        let (dx, dy) = (x as f64 + 0.5 - centre.x, y as f64 + 0.5 - centre.y);
                        for (j, &(c, s)) in trig.iter().enumerate() {
                            acc[bin(dx * c + dy * s) * theta_bins + j] += m;
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![0.0; rho_bins * theta_bins],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        Ok(HoughAccumulator {
            rho_bins,
            theta_bins,
            rho_max,
            centre,
            votes,
        })
    }

    pub fn vote(&self, rho: usize, theta: usize) -> f64 {
        self.votes[rho * self.theta_bins + theta]
    }

    pub fn rho_step(&self) -> f64 {
        2.0 * self.rho_max / self.rho_bins as f64
    }

    pub fn theta_step(&self) -> f64 {
        std::f64::consts::PI / self.theta_bins as f64
    }

    /// Normal form of the bin centre in image coordinates.
    pub fn line_of(
        &self,
        id: usize,
        rho: usize,
        theta: usize,
        activity: f64,
    ) -> Result<Line, GeometryError> {
        let th = theta as f64 * self.theta_step();
        let r = -self.rho_max + (rho as f64 + 0.5) * self.rho_step();
        let (c, s) = (th.cos(), th.sin());
        Line::new(
            id,
            c,
            s,
            r + self.centre.x * c + self.centre.y * s,
            activity,
        )
    }

    /// The 8 neighbours of a bin. Angle wraps from `π` back to `0` with the
    /// offset mirrored.
    fn neighbours(&self, rho: usize, theta: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(8);
        for dt in [-1i64, 0, 1] {
            for dr in [-1i64, 0, 1] {
                if dt == 0 && dr == 0 {
                    continue;
                }
                let mut t = theta as i64 + dt;
                let mut r = rho as i64 + dr;
                if t < 0 || t >= self.theta_bins as i64 {
                    t = t.rem_euclid(self.theta_bins as i64);
                    r = self.rho_bins as i64 - 1 - r;
                }
                if r >= 0 && r < self.rho_bins as i64 {
                    out.push((r as usize, t as usize));
                }
            }
        }
        out
    }

    /// `n_top` highest bins, then up to `quota` strict local maxima by vote.
    pub fn peaks(&self, n_top: usize, quota: usize) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, usize)> = (0..self.rho_bins)
            .flat_map(|r| (0..self.theta_bins).map(move |t| (r, t)))
            .collect();
        order.retain(|&(r, t)| self.vote(r, t) > 0.0);
        order.sort_by(|a, b| {
            self.vote(b.0, b.1)
                .total_cmp(&self.vote(a.0, a.1))
                .then(a.cmp(b))
        });
        let mut chosen: Vec<(usize, usize)> = order.iter().copied().take(n_top).collect();
        let extra = order
            .iter()
            .copied()
            .skip(n_top)
            .filter(|&(r, t)| {
                let v = self.vote(r, t);
                self.neighbours(r, t)
                    .iter()
                    .all(|&(nr, nt)| self.vote(nr, nt) < v)
            })
            .take(quota);
        chosen.extend(extra);
        chosen
    }
}

/// Hough line family of a gradient field, regularised into a tessellation.
pub fn hough_tessellation(
    grad: &GradientField,
    bins: (usize, usize),
    n_top: usize,
    extrema_quota: usize,
    activity: f64,
) -> Result<Tessellation, ExtractError> {
    let acc = HoughAccumulator::accumulate(grad, bins.0, bins.1)?;
    if !acc.votes.iter().any(|&v| v > 0.0) {
        return Err(ExtractError::NoAccumulatorMass);
    }
    let lines = acc
        .peaks(n_top, extrema_quota)
        .into_iter()
        .enumerate()
        .map(|(i, (r, t))| acc.line_of(i, r, t, activity))
        .collect::<Result<Vec<_>, _>>()
        .map_err(ExtractError::stage("hough"))?;
    let domain = Domain::rectangle(0.0, 0.0, grad.width as f64, grad.height as f64)
        .map_err(ExtractError::stage("hough"))?;
    let opts = RegularizeOptions {
        rho_tol: acc.rho_step() / 2.0,
        theta_tol: acc.theta_step() / 2.0,
        ..Default::default()
    };
    let lines = regularize_lines(lines, &domain, &opts)?;
    build_tessellation(lines, domain).map_err(ExtractError::stage("tessellation"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizeOptions {
    /// Offsets closer than this (with angles within `theta_tol`) are duplicates.
    pub rho_tol: f64,
    pub theta_tol: f64,
    /// Clearance demanded between a crossing and a third line or the boundary.
    pub clearance: f64,
    /// Largest offset change applied to a single line.
    pub max_nudge: f64,
}

impl Default for RegularizeOptions {
    fn default() -> Self {
        RegularizeOptions {
            rho_tol: 1e-6,
            theta_tol: 1e-6,
            clearance: 1e-3,
            max_nudge: 1.0,
        }
    }
}

fn angle_of(l: &Line) -> f64 {
    l.b.atan2(l.a)
}

fn near_duplicate(a: &Line, b: &Line, o: &RegularizeOptions) -> bool {
    let d = (angle_of(a) - angle_of(b)).abs();
    // canonical normals put angles in (-π/2, π/2]; near ±π/2 the offset flips sign
    if d <= o.theta_tol {
        (a.c - b.c).abs() <= o.rho_tol
    } else if std::f64::consts::PI - d <= o.theta_tol {
        (a.c + b.c).abs() <= o.rho_tol
    } else {
        false
    }
}

fn crossing(a: &Line, b: &Line) -> Option<Point> {
    let det = a.a * b.b - a.b * b.a;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(Point::new(
        (a.c * b.b - a.b * b.c) / det,
        (a.a * b.c - a.c * b.a) / det,
    ))
}

/// First line (by position) involved in a degeneracy, if any.
fn first_degeneracy(lines: &[Line], domain: &Domain, clearance: f64) -> Option<usize> {
    for (i, l) in lines.iter().enumerate() {
        if domain
            .vertices()
            .iter()
            .any(|&v| l.signed_distance(v).abs() <= clearance)
        {
            return Some(i);
        }
    }
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let Some(p) = crossing(&lines[i], &lines[j]) else {
                if (lines[i].c - lines[j].c).abs() <= clearance {
                    return Some(j);
                }
                continue;
            };
            let d = domain.boundary_distance(p);
            if d.abs() <= clearance {
                return Some(j);
            }
            if d > 0.0 {
                for (k, lk) in lines.iter().enumerate() {
                    if k != i && k != j && lk.signed_distance(p).abs() <= clearance {
                        return Some(i.max(j).max(k));
                    }
                }
            }
        }
    }
    None
}

/// Removes near-duplicates and lines missing the domain, then nudges
/// offsets until no three lines meet and no crossing or line touches the
/// boundary at a corner. Lines are renumbered in order.
pub fn regularize_lines(
    lines: Vec<Line>,
    domain: &Domain,
    opts: &RegularizeOptions,
) -> Result<Vec<Line>, ExtractError> {
    let mut kept: Vec<Line> = Vec::with_capacity(lines.len());
    for l in lines {
        let inside = domain
            .chord(&l)
            .is_some_and(|(a, b)| a.distance(b) > opts.clearance);
        if inside && !kept.iter().any(|k| near_duplicate(k, &l, opts)) {
            kept.push(l);
        }
    }
    for (i, l) in kept.iter_mut().enumerate() {
        l.id = i;
    }
    let original: Vec<f64> = kept.iter().map(|l| l.c).collect();
    let step = opts.max_nudge / 16.0;
    let mut tries = vec![0usize; kept.len()];
    let mut budget = 64 * kept.len().max(1);
    while let Some(i) = first_degeneracy(&kept, domain, opts.clearance) {
        if budget == 0 {
            return Err(ExtractError::IrreparableDegeneracy(format!(
                "line {i} still degenerate"
            )));
        }
        budget -= 1;
        tries[i] += 1;
        // +1, -1, +2, -2, ... steps
        let n = tries[i];
        let magnitude = n.div_ceil(2) as f64 * step;
        if magnitude > opts.max_nudge + GEOMETRY_TOLERANCE {
            return Err(ExtractError::IrreparableDegeneracy(format!(
                "line {i} needs more than {} of offset change",
                opts.max_nudge
            )));
        }
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        kept[i].c = original[i] + sign * magnitude;
    }
    build_tessellation(kept.clone(), domain.clone())
        .map_err(|e| ExtractError::IrreparableDegeneracy(e.to_string()))?;
    Ok(kept)
}

/// Where the absolute value enters the flux quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsMode {
    /// `Σ |∇I · n|` over the unit steps.
    #[default]
    PerStep,
    /// `|Σ ∇I · n|` over each segment.
    PerSegment,
}

/// Number of quadrature steps for a segment of length `len`.
fn steps_for(len: f64) -> usize {
    (len.round() as usize).max(1)
}

/// Gradient flux through one straight piece, stepping in about unit lengths.
pub fn segment_flux(grad: &GradientField, a: Point, b: Point, mode: AbsMode) -> f64 {
    let len = a.distance(b);
    if len == 0.0 {
        return 0.0;
    }
    let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    let normal = (-uy, ux);
    let n = steps_for(len);
    let h = len / n as f64;
    let terms = (0..n).map(|i| {
        let f = (i as f64 + 0.5) / n as f64;
        let (gx, gy) = grad.sample(Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)));
        (gx * normal.0 + gy * normal.1) * h
    });
    match mode {
        AbsMode::PerStep => terms.map(f64::abs).sum(),
        AbsMode::PerSegment => terms.sum::<f64>().abs(),
    }
}

/// Flux energy `-β Σ_segments (f - c)` over the active segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxModifier {
    pub beta: f64,
    pub c: f64,
    /// Flux through every segment of the tessellation.
    pub flux: Vec<f64>,
    weights: Vec<f64>,
}

impl FluxModifier {
    pub fn new(
        grad: &GradientField,
        t: &Tessellation,
        beta: f64,
        c: f64,
        mode: AbsMode,
    ) -> Result<Self, ExtractError> {
        if !(beta > 0.0 && beta.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(ExtractError::BadFluxParameters { beta, c });
        }
        let (w, h) = (grad.width as f64, grad.height as f64);
        let slack = 1e-6;
        let outside = |p: Point| p.x < -slack || p.y < -slack || p.x > w + slack || p.y > h + slack;
        let flux = t
            .segments()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if outside(s.tail_point) || outside(s.head_point) {
                    Err(ExtractError::EdgeOutsideImage(i))
                } else {
                    Ok(segment_flux(grad, s.tail_point, s.head_point, mode))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let weights = flux.iter().map(|f| -beta * (f - c)).collect();
        Ok(FluxModifier {
            beta,
            c,
            flux,
            weights,
        })
    }

    pub fn segment_energy(&self, s: usize) -> f64 {
        self.weights[s]
    }
}

impl GibbsModifier for FluxModifier {
    fn evaluate(&self, m: &Mosaic) -> f64 {
        flux_hamiltonian(m, self)
    }

    fn segment_weights(&self) -> Option<&[f64]> {
        Some(&self.weights)
    }
}

/// `-β Σ_e (f(e) - c·|e|)`, where `|e|` counts the segments of edge `e`.
pub fn flux_hamiltonian(m: &Mosaic, f: &FluxModifier) -> f64 {
    m.active()
        .iter()
        .zip(&f.weights)
        .filter(|(&a, _)| a)
        .map(|(_, w)| w)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub sigma: f64,
    pub rho_bins: usize,
    pub theta_bins: usize,
    pub n_top: usize,
    /// Total number of lines, top bins included.
    pub total_lines: usize,
    pub k: usize,
    pub alpha_v: f64,
    pub activity: f64,
    pub c: f64,
    pub tau: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sweeps: usize,
    pub abs_mode: AbsMode,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            sigma: 3.0,
            rho_bins: 80,
            theta_bins: 80,
            n_top: 8,
            total_lines: 42,
            k: 4,
            alpha_v: 0.5,
            activity: 0.5,
            c: 2.0,
            tau: 100.0,
            beta_start: 0.1,
            beta_end: 100.0,
            sweeps: 500,
            abs_mode: AbsMode::PerStep,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub tessellation: Arc<Tessellation>,
    pub mosaic: Mosaic,
    /// Flux energy of `mosaic` at unit coupling.
    pub energy: f64,
    pub trace: Vec<TraceRow>,
}

/// Full pipeline: gradient, Hough family, annealed flux energy.
///
/// The flux coupling is the annealing inverse temperature itself, so the
/// modifier is built at unit coupling and scaled by the schedule.
pub fn extract_network(
    img: &GrayImage,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Extraction, ExtractError> {
    if cfg.total_lines < cfg.n_top {
        return Err(ExtractError::BadBins);
    }
    let params =
        derive_params(cfg.k, cfg.alpha_v).map_err(ExtractError::stage::<ModelError>("model"))?;
    let schedule = AnnealSchedule::geometric(cfg.beta_start, cfg.beta_end, cfg.sweeps)
        .map_err(ExtractError::stage::<McmcError>("schedule"))?;
    let grad = gradient_field(img, cfg.sigma)?;
    let t = match hough_tessellation(
        &grad,
        (cfg.rho_bins, cfg.theta_bins),
        cfg.n_top,
        cfg.total_lines - cfg.n_top,
        cfg.activity,
    ) {
        Ok(t) => t,
        // a flat image carries no evidence for any line
        Err(ExtractError::NoAccumulatorMass) => build_tessellation(Vec::new(), img.domain())
            .map_err(ExtractError::stage("tessellation"))?,
        Err(e) => return Err(e),
    };
    let t = Arc::new(t);
    let flux = FluxModifier::new(&grad, &t, 1.0, cfg.c, cfg.abs_mode)?;
    let start = ChainState::new(
        Mosaic::monochrome(t.clone(), params.k, 1).map_err(ExtractError::stage("model"))?,
    );
    let res = anneal(start, &params, &flux, &schedule, cfg.tau, seed)
        .map_err(ExtractError::stage("anneal"))?;
    Ok(Extraction {
        tessellation: t,
        mosaic: res.best,
        energy: res.best_energy,
        trace: res.trace,
    })
}

/// Bright straight grid lines on a dark background with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGrid {
    pub size: usize,
    /// Lines per direction.
    pub lines: usize,
    /// Band width in pixels.
    pub width: usize,
    pub intensity: f64,
    pub noise: f64,
}

impl Default for PlantedGrid {
    fn default() -> Self {
        PlantedGrid {
            size: 128,
            lines: 4,
            width: 3,
            intensity: 1.0,
            noise: 0.1,
        }
    }
}

impl PlantedGrid {
    /// Centre coordinates of the grid lines (same in both directions).
    ///
    /// Odd band widths centre on a pixel centre, even ones on a pixel border.
    pub fn positions(&self) -> Vec<f64> {
        let gap = self.size as f64 / self.lines as f64;
        let shift = if self.width % 2 == 1 { 0.5 } else { 0.0 };
        (0..self.lines)
            .map(|i| ((i as f64 + 0.5) * gap).floor() + shift)
            .collect()
    }

    /// Centre lines as segments spanning the image.
    pub fn truth(&self) -> Vec<(Point, Point)> {
        let s = self.size as f64;
        let mut out = Vec::new();
        for p in self.positions() {
            out.push((Point::new(p, 0.0), Point::new(p, s)));
            out.push((Point::new(0.0, p), Point::new(s, p)));
        }
        out
    }

    fn on_band(&self, v: usize) -> bool {
        let centre = v as f64 + 0.5;
        self.positions()
            .iter()
            .any(|p| (centre - p).abs() < self.width as f64 / 2.0)
    }

    pub fn render(&self, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let n = self.size;
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let base = if self.on_band(x) || self.on_band(y) {
                    self.intensity
                } else {
                    0.0
                };
                data.push(
                    base + if self.noise > 0.0 {
                        normal.sample(&mut rng)
                    } else {
                        0.0
                    },
                );
            }
        }
        GrayImage {
            width: n,
            height: n,
            data,
        }
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

fn unit_samples(pieces: &[(Point, Point)]) -> Vec<Point> {
    let mut out = Vec::new();
    for &(a, b) in pieces {
        let n = steps_for(a.distance(b));
        out.extend((0..n).map(|i| {
            let f = (i as f64 + 0.5) / n as f64;
            Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length-weighted edge matching at a distance tolerance.
///
/// Both edge sets are sampled at unit steps. Precision is the share of
/// extracted samples within `tol` of the truth, recall the share of truth
/// samples within `tol` of the extraction. Two empty sets score 1.
pub fn edge_f1(extracted: &[(Point, Point)], truth: &[(Point, Point)], tol: f64) -> EdgeScore {
    let near = |samples: &[Point], target: &[(Point, Point)]| -> f64 {
        if samples.is_empty() {
            return 1.0;
        }
        let hits = samples
            .iter()
            .filter(|&&p| {
                target
                    .iter()
                    .any(|&(a, b)| point_segment_distance(p, a, b) <= tol)
            })
            .count();
        hits as f64 / samples.len() as f64
    };
    let (es, ts) = (unit_samples(extracted), unit_samples(truth));
    if es.is_empty() && ts.is_empty() {
        return EdgeScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = if es.is_empty() { 0.0 } else { near(&es, truth) };
    let recall = if ts.is_empty() {
        0.0
    } else {
        near(&ts, extracted)
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EdgeScore {
        precision,
        recall,
        f1,
    }
}

/// Active segments of a mosaic as point pairs.
pub fn active_pieces(m: &Mosaic) -> Vec<(Point, Point)> {
    let t = m.tessellation();
    t.segments()
        .iter()
        .zip(m.active())
        .filter(|(_, &a)| a)
        .map(|(s, _)| (s.tail_point, s.head_point))
        .collect()
}
