//! File formats: mosaic and tessellation JSON, SVG overlays, grey-level
//! images and CSV tables.

use crate::extract::{ExtractError, GrayImage};
use crate::geometry::{
    build_lattice, build_tessellation, Domain, GeometryError, Line, Point, Tessellation,
};
use crate::mcmc::{StepRecord, TraceRow};
use crate::mosaic::{mosaic_to_pixels, Colour, Mosaic, MosaicError};
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mosaic(#[from] MosaicError),
    #[error("stored active segments disagree with the cell colours")]
    InconsistentSegments,
    #[error("pixel rows have unequal lengths")]
    RaggedPixels,
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDoc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDoc {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TessellationDoc {
    /// Domain polygon, counter-clockwise `[x, y]` pairs.
    pub domain: Vec<[f64; 2]>,
    pub lines: Vec<LineDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeDoc>,
}

impl TessellationDoc {
    pub fn from_tessellation(t: &Tessellation) -> Self {
        TessellationDoc {
            domain: t.domain().vertices().iter().map(|p| [p.x, p.y]).collect(),
            lines: t
                .lines()
                .iter()
                .map(|l| LineDoc {
                    a: l.a,
                    b: l.b,
                    c: l.c,
                    activity: l.activity,
                })
                .collect(),
            lattice: t.lattice().map(|l| LatticeDoc {
                rows: l.rows,
                cols: l.cols,
            }),
        }
    }

    /// Rebuilds the tessellation. Lattices are rebuilt from their size and
    /// line activities so that cell numbering matches the original.
    pub fn build(&self) -> Result<Tessellation, IoError> {
        let activities: Vec<f64> = self.lines.iter().map(|l| l.activity).collect();
        if let Some(l) = &self.lattice {
            return Ok(build_lattice(l.rows, l.cols, &activities)?);
        }
        let domain = Domain::polygon(self.domain.iter().map(|&[x, y]| Point::new(x, y)).collect())?;
        let lines = self
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let line = Line::new(i, l.a, l.b, l.c, l.activity)?;
                // keep stored unit normals bit-exact instead of renormalising
                let same = (line.a - l.a).abs() < 1e-12
                    && (line.b - l.b).abs() < 1e-12
                    && (line.c - l.c).abs() < 1e-9;
                Ok::<_, GeometryError>(if same {
                    Line {
                        a: l.a,
                        b: l.b,
                        c: l.c,
                        ..line
                    }
                } else {
                    line
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(build_tessellation(lines, domain)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicDoc {
    pub format_version: u32,
    pub tessellation: TessellationDoc,
    pub k: Colour,
    /// Row-major pixel colours, lattices only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<Vec<Colour>>>,
    pub cell_colours: Vec<Colour>,
    pub active_segments: Vec<usize>,
}

impl MosaicDoc {
    pub fn from_mosaic(m: &Mosaic) -> Self {
        let pixels = mosaic_to_pixels(m)
            .ok()
            .map(|p| p.data.chunks(p.cols).map(<[Colour]>::to_vec).collect());
        MosaicDoc {
            format_version: FORMAT_VERSION,
            tessellation: TessellationDoc::from_tessellation(m.tessellation()),
            k: m.k(),
            pixels,
            cell_colours: m.colours().to_vec(),
            active_segments: (0..m.active().len()).filter(|&s| m.is_active(s)).collect(),
        }
    }

    pub fn to_mosaic(&self) -> Result<Mosaic, IoError> {
        if self.format_version != FORMAT_VERSION {
            return Err(IoError::Version(self.format_version));
        }
        let t = Arc::new(self.tessellation.build()?);
        let colours = match (&self.pixels, t.lattice()) {
            (Some(rows), Some(lat)) => {
                if rows.len() != lat.rows || rows.iter().any(|r| r.len() != lat.cols) {
                    return Err(IoError::RaggedPixels);
                }
                let mut c = vec![0; t.num_cells()];
                for (r, row) in rows.iter().enumerate() {
                    for (col, &v) in row.iter().enumerate() {
                        c[lat.cell(r, col)] = v;
                    }
                }
                c
            }
            _ => self.cell_colours.clone(),
        };
        let m = Mosaic::from_cell_colours(t, self.k, colours)?;
        let active: Vec<usize> = (0..m.active().len()).filter(|&s| m.is_active(s)).collect();
        if active != self.active_segments || m.colours() != self.cell_colours.as_slice() {
            return Err(IoError::InconsistentSegments);
        }
        Ok(m)
    }
}

pub fn mosaic_to_json(m: &Mosaic) -> String {
    serde_json::to_string_pretty(&MosaicDoc::from_mosaic(m)).expect("plain data") + "\n"
}

pub fn mosaic_from_json(s: &str) -> Result<Mosaic, IoError> {
    serde_json::from_str::<MosaicDoc>(s)?.to_mosaic()
}

pub fn read_mosaic(path: &Path) -> Result<Mosaic, IoError> {
    mosaic_from_json(&std::fs::read_to_string(path)?)
}

pub fn tessellation_to_json(t: &Tessellation) -> String {
    serde_json::to_string_pretty(&TessellationDoc::from_tessellation(t)).expect("plain data") + "\n"
}

pub fn tessellation_from_json(s: &str) -> Result<Tessellation, IoError> {
    serde_json::from_str::<TessellationDoc>(s)?.build()
}

/// Fill colours for labels `1, 2, ...`, cycled.
pub const PALETTE: [&str; 8] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub fill_faces: bool,
    pub fill_opacity: f64,
    pub edge_colour: String,
    pub edge_width: f64,
    /// Output pixels per domain unit.
    pub scale: f64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            fill_faces: true,
            fill_opacity: 0.35,
            edge_colour: "#ffd700".into(),
            edge_width: 2.0,
            scale: 4.0,
        }
    }
}

fn fixed(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

/// Cells grouped into faces: connected across inactive segments.
pub fn faces(m: &Mosaic) -> Vec<Vec<usize>> {
    let t = m.tessellation();
    let mut parent: Vec<usize> = (0..t.num_cells()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (s, seg) in t.segments().iter().enumerate() {
        if !m.is_active(s) {
            let (a, b) = (root(&mut parent, seg.below), root(&mut parent, seg.above));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for c in 0..t.num_cells() {
        let r = root(&mut parent, c);
        groups.entry(r).or_default().push(c);
    }
    groups.into_values().collect()
}

fn png_data_uri(img: &GrayImage) -> Result<String, IoError> {
    let mut buf = Vec::new();
    to_luma8(img).write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf)
    ))
}

/// Deterministic SVG: optional raster background, one path per face and one
/// polyline per edge. Coordinates are integers in hundredths of a unit.
pub fn render_svg(
    m: &Mosaic,
    background: Option<&GrayImage>,
    opts: &SvgOptions,
) -> Result<String, IoError> {
    let t = m.tessellation();
    let (lo, hi) = t.domain().bounding_box();
    let (x0, y0, w, h) = (
        fixed(lo.x),
        fixed(lo.y),
        fixed(hi.x) - fixed(lo.x),
        fixed(hi.y) - fixed(lo.y),
    );
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="{x0} {y0} {w} {h}">"#,
        ((hi.x - lo.x) * opts.scale).round() as i64,
        ((hi.y - lo.y) * opts.scale).round() as i64,
    );
    if let Some(img) = background {
        let _ = writeln!(
            out,
            r#"<image x="0" y="0" width="{}" height="{}" preserveAspectRatio="none" href="{}"/>"#,
            fixed(img.width() as f64),
            fixed(img.height() as f64),
            png_data_uri(img)?
        );
    }
    if opts.fill_faces {
        let _ = writeln!(
            out,
            r#"<g fill-opacity="{}" stroke="none">"#,
            opts.fill_opacity
        );
        for face in faces(m) {
            let colour = m.colour(face[0]);
            let mut d = String::new();
            for &c in &face {
                for (i, p) in t.cell(c).polygon.iter().enumerate() {
                    let _ = write!(
                        d,
                        "{}{} {} ",
                        if i == 0 { "M" } else { "L" },
                        fixed(p.x),
                        fixed(p.y)
                    );
                }
                d.push_str("Z ");
            }
            let _ = writeln!(
                out,
                r#"<path fill="{}" d="{}"/>"#,
                PALETTE[(colour as usize - 1) % PALETTE.len()],
                d.trim_end()
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let stats = m.analyze()?;
    let _ = writeln!(
        out,
        r#"<g fill="none" stroke="{}" stroke-width="{}" stroke-linecap="round">"#,
        opts.edge_colour,
        fixed(opts.edge_width / opts.scale)
    );
    for e in &stats.edges {
        let first = t.segment(e.segments[0]);
        let mut pts = vec![first.tail_point];
        pts.extend(e.segments.iter().map(|&s| t.segment(s).head_point));
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{},{}", fixed(p.x), fixed(p.y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}"/>"#, coords.join(" "));
    }
    let _ = writeln!(out, "</g>\n</svg>");
    Ok(out)
}

/// Intensities mapped linearly onto `0..=255` (constant images become black).
pub fn to_luma8(img: &GrayImage) -> image::GrayImage {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes = img
        .data()
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size")
}

/// Reads a PGM or PNG as grey levels in `0..=255`.
pub fn read_image(path: &Path) -> Result<GrayImage, IoError> {
    let luma = image::open(path)?.to_luma8();
    Ok(GrayImage::new(
        luma.width() as usize,
        luma.height() as usize,
        luma.as_raw().iter().map(|&v| v as f64).collect(),
    )?)
}

/// Writes grey levels clamped to `0..=255`; the format follows the extension.
pub fn write_image(img: &GrayImage, path: &Path) -> Result<(), IoError> {
    let bytes = img
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let luma = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer size");
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let enc = image::codecs::pnm::PnmEncoder::new(&mut f).with_subtype(
            image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary),
        );
        luma.write_with_encoder(enc)?;
        f.flush()?;
    } else {
        luma.save(path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DiagnosticRow {
    clock: f64,
    event: String,
    delta_phi: f64,
    delta_h: f64,
    accepted: bool,
}

pub fn write_diagnostics<W: Write>(w: W, records: &[StepRecord]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(DiagnosticRow {
            clock: r.clock,
            event: r.kind.name().to_string(),
            delta_phi: r.delta_phi,
            delta_h: r.delta_h,
            accepted: r.accepted,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceCsvRow {
    sweep: usize,
    beta: f64,
    energy: f64,
    best: f64,
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRow]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for r in trace {
        out.serialize(TraceCsvRow {
            sweep: r.sweep,
            beta: r.beta,
            energy: r.energy,
            best: r.best,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of a trace CSV, for round trips.
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, IoError> {
    csv::Reader::from_reader(r)
        .deserialize::<TraceCsvRow>()
        .map(|row| {
            let row = row?;
            Ok(TraceRow {
                sweep: row.sweep,
                beta: row.beta,
                energy: row.energy,
                best: row.best,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_uniform_lattice;
    use crate::mosaic::pixels_to_mosaic;
    use crate::mosaic::PixelArray;

    fn split() -> Mosaic {
        let t = Arc::new(build_uniform_lattice(2, 2, 0.5).unwrap());
        pixels_to_mosaic(&PixelArray::new(2, 2, vec![1, 2, 1, 2]), t, 3).unwrap()
    }

    #[test]
    fn json_round_trip_on_lattice() {
        let m = split();
        let s = mosaic_to_json(&m);
        assert!(s.contains("\"format_version\": 1"));
        let back = mosaic_from_json(&s).unwrap();
        assert_eq!(back.colours(), m.colours());
        assert_eq!(back.active(), m.active());
        assert_eq!(mosaic_to_json(&back), s);
    }

    #[test]
    fn json_rejects_tampering() {
        let mut doc = MosaicDoc::from_mosaic(&split());
        doc.active_segments.pop();
        assert!(matches!(
            doc.to_mosaic(),
            Err(IoError::InconsistentSegments)
        ));
        let mut doc = MosaicDoc::from_mosaic(&split());
        doc.format_version = 7;
        assert!(matches!(doc.to_mosaic(), Err(IoError::Version(7))));
        assert!(mosaic_from_json("{").is_err());
    }

    #[test]
    fn general_tessellation_round_trip() {
        let d = Domain::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        let lines = vec![
            Line::new(0, 0.3, 1.0, 3.5, 0.4).unwrap(),
            Line::new(1, 1.0, -0.2, 6.0, 0.6).unwrap(),
        ];
        let t = build_tessellation(lines, d).unwrap();
        let back = tessellation_from_json(&tessellation_to_json(&t)).unwrap();
        assert_eq!(back.num_cells(), t.num_cells());
        assert_eq!(back.lines(), t.lines());
        let t = Arc::new(t);
        let m = Mosaic::from_cell_colours(
            t.clone(),
            2,
            (0..t.num_cells()).map(|c| (c % 2) as u8 + 1).collect(),
        )
        .unwrap();
        let doc = MosaicDoc::from_mosaic(&m);
        assert!(doc.pixels.is_none());
        assert_eq!(doc.to_mosaic().unwrap().colours(), m.colours());
    }

    #[test]
    fn svg_of_split_lattice() {
        let m = split();
        let svg = render_svg(&m, None, &SvgOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains(r#"<polyline points="100,0 100,100 100,200"/>"#));
        assert_eq!(svg, render_svg(&m, None, &SvgOptions::default()).unwrap());
    }

    #[test]
    fn svg_of_empty_mosaic_with_background() {
        let t = Arc::new(build_uniform_lattice(4, 4, 0.5).unwrap());
        let m = Mosaic::monochrome(t, 2, 1).unwrap();
        let img = GrayImage::from_fn(4, 4, |x, y| (x * y) as f64).unwrap();
        let opts = SvgOptions {
            fill_faces: false,
            ..Default::default()
        };
        let svg = render_svg(&m, Some(&img), &opts).unwrap();
        assert_eq!(svg.matches("<image").count(), 1);
        assert!(svg.contains("data:image/png;base64,"));
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert_eq!(svg.matches("<path").count(), 0);
    }

    #[test]
    fn image_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 40 + y * 7) as f64).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            write_image(&img, &p).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
        let bytes = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }

    #[test]
    fn trace_csv_round_trip() {
        let rows = vec![
            TraceRow {
                sweep: 0,
                beta: 0.1,
                energy: -2.5,
                best: -3.0,
            },
            TraceRow {
                sweep: 1,
                beta: 0.2,
                energy: 1.0,
                best: -3.0,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("sweep,beta,energy,best\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }
}
