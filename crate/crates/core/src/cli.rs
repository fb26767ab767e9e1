//! Command-line front end.
//!
//! Every subcommand is a pure function of its arguments and `--seed`, so
//! repeated runs write byte-identical files.

use crate::dynamics::sample_exact_augmented;
use crate::extract::{extract_network, AbsMode, ExtractionConfig};
use crate::geometry::{build_lattice, Tessellation};
use crate::io::{
    mosaic_to_json, read_image, read_mosaic, render_svg, tessellation_from_json, write_diagnostics,
    write_trace, SvgOptions,
};
use crate::mcmc::{anneal, AnnealSchedule, Chain, ChainState};
use crate::model::{
    derive_params, hamiltonian_phi, log_partition_function, log_weight, ModelParams,
    SegmentModifier,
};
use crate::mosaic::Mosaic;
use crate::oracle::enumerate_exact_with_cap;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(
    name = "polyfield",
    version,
    about = "Coloured polygonal random fields on line tessellations"
)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, env = "POLYFIELD_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw exact samples with the particle dynamics.
    Sample(SampleArgs),
    /// Run the birth-death-recolour chain and record every event.
    Mcmc(McmcArgs),
    /// Tabulate all configurations of a small lattice.
    Enumerate(EnumerateArgs),
    /// Energy, weight and probability of a stored configuration.
    Score(ScoreArgs),
    /// Anneal a per-segment energy on top of the field.
    Anneal(AnnealArgs),
    /// Extract a line network from a grey-level image.
    Extract(ExtractArgs),
    /// Check a tessellation or configuration file.
    Validate(ValidateArgs),
    /// Draw a configuration as SVG or PNG.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    /// Pixel lattice as ROWSxCOLS.
    #[arg(long, value_parser = parse_pair, conflicts_with = "tessellation")]
    pub lattice: Option<(usize, usize)>,
    /// Tessellation JSON file.
    #[arg(long)]
    pub tessellation: Option<PathBuf>,
    /// Number of colours.
    #[arg(long, default_value_t = 3, value_parser = parse_k)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    pub alpha_v: f64,
    /// Line activity used for every lattice line.
    #[arg(long, default_value_t = 0.5, value_parser = parse_activity)]
    pub pi: f64,
}

impl FieldArgs {
    fn tessellation(&self) -> Result<Arc<Tessellation>> {
        let t = match (&self.lattice, &self.tessellation) {
            (&Some((rows, cols)), None) => {
                build_lattice(rows, cols, &vec![self.pi; (rows + cols).saturating_sub(2)])?
            }
            (None, Some(path)) => tessellation_from_json(&read(path)?)?,
            _ => bail!("give either --lattice or --tessellation"),
        };
        Ok(Arc::new(t))
    }

    fn params(&self) -> Result<ModelParams> {
        Ok(derive_params(self.k, self.alpha_v)?)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Independent samples, written with a per-chain suffix.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitialState {
    /// Single-colour configuration.
    Empty,
    /// Exact sample from the particle dynamics.
    Exact,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// Number of clock rings.
    #[arg(long, default_value_t = 10_000)]
    pub events: usize,
    /// Recolour rate.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Extra energy per active segment.
    #[arg(long)]
    pub segment_cost: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitialState::Empty)]
    pub init: InitialState,
    /// Per-event CSV: clock, event, delta_phi, delta_h, accepted.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Final configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// Largest number of states to enumerate.
    #[arg(long, default_value_t = 20_000_000)]
    pub cap: usize,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Configuration JSON.
    #[arg(long)]
    pub mosaic: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    pub alpha_v: f64,
}

#[derive(Debug, Args)]
pub struct AnnealArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// Energy per active segment.
    #[arg(long, default_value_t = 1.0)]
    pub segment_cost: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 100.0)]
    pub beta_end: f64,
    #[arg(long, default_value_t = 500)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 100.0)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AbsArg {
    PerStep,
    PerSegment,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// PGM or PNG input.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    /// Hough array as OFFSETSxANGLES.
    #[arg(long, value_parser = parse_pair, default_value = "80x80")]
    pub hough: (usize, usize),
    /// Lines taken from the highest bins.
    #[arg(long, default_value_t = 8)]
    pub top: usize,
    /// Total number of lines.
    #[arg(long, default_value_t = 42)]
    pub lines: usize,
    #[arg(long, default_value_t = 4, value_parser = parse_k)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    pub alpha_v: f64,
    /// Activity of every extracted line.
    #[arg(long, default_value_t = 0.5, value_parser = parse_activity)]
    pub pi: f64,
    /// Threshold per segment.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    #[arg(long, default_value_t = 100.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 100.0)]
    pub beta_end: f64,
    #[arg(long, default_value_t = 500)]
    pub sweeps: usize,
    #[arg(long, value_enum, default_value_t = AbsArg::PerStep)]
    pub abs: AbsArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Overlay on the input image.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(
        long,
        conflicts_with = "tessellation",
        required_unless_present = "tessellation"
    )]
    pub mosaic: Option<PathBuf>,
    #[arg(long)]
    pub tessellation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mosaic: PathBuf,
    #[arg(long, required_unless_present = "png")]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Raster background for the SVG.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Output pixels per domain unit.
    #[arg(long, default_value_t = 4.0)]
    pub scale: f64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let a = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if a == 0 || b == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((a, b))
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k) if (2..=255).contains(&k) => Ok(k),
        Ok(k) => Err(format!("need between 2 and 255 colours, got {k}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("{v} is outside [0, 1]")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_activity(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 1)")),
        Err(e) => Err(e.to_string()),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `out.json` becomes `out.chain3.json` when several chains run.
pub fn chain_path(path: &Path, chain: usize, chains: usize) -> PathBuf {
    if chains <= 1 {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.chain{chain}.{}", ext.to_string_lossy()),
        None => format!("{stem}.chain{chain}"),
    };
    path.with_file_name(name)
}

/// Seed of chain `i`; chain 0 uses the base seed.
pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    seed.wrapping_add((chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn for_each_chain(chains: usize, f: impl Fn(usize) -> Result<()> + Sync) -> Result<()> {
    if chains == 0 {
        bail!("--chains must be at least 1");
    }
    (0..chains)
        .into_par_iter()
        .map(&f)
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let t = a.field.tessellation()?;
    let p = a.field.params()?;
    for_each_chain(a.chains, |i| {
        let s = sample_exact_augmented(&t, &p, chain_seed(seed, i));
        write(&chain_path(&a.out, i, a.chains), mosaic_to_json(&s.mosaic))?;
        if let Some(svg) = &a.svg {
            write(
                &chain_path(svg, i, a.chains),
                render_svg(&s.mosaic, None, &SvgOptions::default())?,
            )?;
        }
        Ok(())
    })
}

fn mcmc(a: &McmcArgs, seed: u64) -> Result<()> {
    let t = a.field.tessellation()?;
    let p = a.field.params()?;
    let modifier = a.segment_cost.map(|c| SegmentModifier::uniform(&t, c));
    for_each_chain(a.chains, |i| {
        let seed = chain_seed(seed, i);
        let start = match a.init {
            InitialState::Empty => ChainState::new(Mosaic::monochrome(t.clone(), p.k, 1)?),
            InitialState::Exact => ChainState::from_sample(sample_exact_augmented(&t, &p, seed)),
        };
        let h = modifier
            .as_ref()
            .map(|m| m as &dyn crate::model::GibbsModifier);
        let mut chain = Chain::new(start, p, h, a.tau, seed.wrapping_add(1))?;
        let records: Vec<_> = (0..a.events).map(|_| chain.step()).collect();
        if let Some(path) = &a.diagnostics {
            let f = std::fs::File::create(chain_path(path, i, a.chains))?;
            write_diagnostics(std::io::BufWriter::new(f), &records)?;
        }
        if let Some(path) = &a.out {
            write(
                &chain_path(path, i, a.chains),
                mosaic_to_json(&chain.state().mosaic),
            )?;
        }
        Ok(())
    })
}

fn enumerate(a: &EnumerateArgs) -> Result<()> {
    let t = a.field.tessellation()?;
    let p = a.field.params()?;
    let table = enumerate_exact_with_cap(t, &p, None, a.cap)?;
    match &a.out {
        Some(path) => table.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?,
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScoreReport {
    phi: f64,
    log_weight: f64,
    log_partition_function: f64,
    log_probability: f64,
    probability: f64,
}

fn score(a: &ScoreArgs) -> Result<()> {
    let m = read_mosaic(&a.mosaic)?;
    let p = derive_params(m.k() as usize, a.alpha_v)?;
    let lw = log_weight(&m, &p);
    let lz = log_partition_function(m.tessellation(), &p);
    let report = ScoreReport {
        phi: hamiltonian_phi(&m, &p),
        log_weight: lw,
        log_partition_function: lz,
        log_probability: lw - lz,
        probability: (lw - lz).exp(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn anneal_cmd(a: &AnnealArgs, seed: u64) -> Result<()> {
    let t = a.field.tessellation()?;
    let p = a.field.params()?;
    let modifier = SegmentModifier::uniform(&t, a.segment_cost);
    let schedule = AnnealSchedule::geometric(a.beta_start, a.beta_end, a.sweeps)?;
    for_each_chain(a.chains, |i| {
        let start = ChainState::new(Mosaic::monochrome(t.clone(), p.k, 1)?);
        let res = anneal(start, &p, &modifier, &schedule, a.tau, chain_seed(seed, i))?;
        write(&chain_path(&a.out, i, a.chains), mosaic_to_json(&res.best))?;
        if let Some(path) = &a.trace {
            write_trace(
                std::io::BufWriter::new(std::fs::File::create(chain_path(path, i, a.chains))?),
                &res.trace,
            )?;
        }
        if let Some(svg) = &a.svg {
            write(
                &chain_path(svg, i, a.chains),
                render_svg(&res.best, None, &SvgOptions::default())?,
            )?;
        }
        Ok(())
    })
}

fn extract_cmd(a: &ExtractArgs, seed: u64) -> Result<()> {
    let img = read_image(&a.image)?;
    let cfg = ExtractionConfig {
        sigma: a.sigma,
        rho_bins: a.hough.0,
        theta_bins: a.hough.1,
        n_top: a.top,
        total_lines: a.lines,
        k: a.k,
        alpha_v: a.alpha_v,
        activity: a.pi,
        c: a.c,
        tau: a.tau,
        beta_start: a.beta_start,
        beta_end: a.beta_end,
        sweeps: a.sweeps,
        abs_mode: match a.abs {
            AbsArg::PerStep => AbsMode::PerStep,
            AbsArg::PerSegment => AbsMode::PerSegment,
        },
    };
    for_each_chain(a.chains, |i| {
        let ex = extract_network(&img, &cfg, chain_seed(seed, i))?;
        write(&chain_path(&a.out, i, a.chains), mosaic_to_json(&ex.mosaic))?;
        if let Some(svg) = &a.svg {
            let opts = SvgOptions {
                fill_faces: false,
                ..Default::default()
            };
            write(
                &chain_path(svg, i, a.chains),
                render_svg(&ex.mosaic, Some(&img), &opts)?,
            )?;
        }
        if let Some(path) = &a.trace {
            write_trace(
                std::io::BufWriter::new(std::fs::File::create(chain_path(path, i, a.chains))?),
                &ex.trace,
            )?;
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    lines: usize,
    nodes: usize,
    segments: usize,
    cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    vertices: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<usize>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let (t, stats) = match (&a.mosaic, &a.tessellation) {
        (Some(path), _) => {
            let m = read_mosaic(path)?;
            let stats = m.analyze()?;
            (m.tessellation_arc().clone(), Some(stats))
        }
        (None, Some(path)) => (Arc::new(tessellation_from_json(&read(path)?)?), None),
        (None, None) => bail!("give --mosaic or --tessellation"),
    };
    let report = ValidationReport {
        lines: t.num_lines(),
        nodes: t.num_nodes(),
        segments: t.num_segments(),
        cells: t.num_cells(),
        vertices: stats.as_ref().map(|s| [s.n_v, s.n_t, s.n_x]),
        edges: stats.as_ref().map(|s| s.edges.len()),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Raster of the faces with edges drawn on top.
pub fn rasterize(m: &Mosaic, scale: f64) -> image::RgbImage {
    let t = m.tessellation();
    let (lo, hi) = t.domain().bounding_box();
    let (w, h) = (
        ((hi.x - lo.x) * scale).ceil().max(1.0) as u32,
        ((hi.y - lo.y) * scale).ceil().max(1.0) as u32,
    );
    let rgb = |hex: &str| {
        let v = u32::from_str_radix(&hex[1..], 16).expect("palette entry");
        image::Rgb([(v >> 16) as u8, (v >> 8) as u8, v as u8])
    };
    let active: Vec<_> = t
        .segments()
        .iter()
        .zip(m.active())
        .filter(|(_, &a)| a)
        .map(|(s, _)| s)
        .collect();
    image::RgbImage::from_fn(w, h, |x, y| {
        let p = crate::geometry::Point::new(
            lo.x + (x as f64 + 0.5) / scale,
            lo.y + (y as f64 + 0.5) / scale,
        );
        let on_edge = active.iter().any(|s| {
            let (a, b) = (s.tail_point, s.head_point);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let f = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            p.distance(crate::geometry::Point::new(a.x + f * dx, a.y + f * dy)) * scale <= 0.75
        });
        if on_edge {
            return image::Rgb([0, 0, 0]);
        }
        match t.locate(p) {
            Some(c) => {
                rgb(crate::io::PALETTE[(m.colour(c) as usize - 1) % crate::io::PALETTE.len()])
            }
            None => image::Rgb([255, 255, 255]),
        }
    })
}

fn render(a: &RenderArgs) -> Result<()> {
    let m = read_mosaic(&a.mosaic)?;
    if let Some(svg) = &a.svg {
        let bg = a.background.as_deref().map(read_image).transpose()?;
        let opts = SvgOptions {
            scale: a.scale,
            ..Default::default()
        };
        write(svg, render_svg(&m, bg.as_ref(), &opts)?)?;
    }
    if let Some(png) = &a.png {
        rasterize(&m, a.scale)
            .save(png)
            .with_context(|| format!("writing {}", png.display()))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => sample(a, cli.seed),
        Command::Mcmc(a) => mcmc(a, cli.seed),
        Command::Enumerate(a) => enumerate(a),
        Command::Score(a) => score(a),
        Command::Anneal(a) => anneal_cmd(a, cli.seed),
        Command::Extract(a) => extract_cmd(a, cli.seed),
        Command::Validate(a) => validate(a),
        Command::Render(a) => render(a),
    }
}

fn report(json: bool, kind: &str, message: &str) {
    if json {
        eprintln!(
            "{}",
            serde_json::json!({ "error": kind, "message": message })
        );
    } else {
        eprintln!("error: {message}");
    }
}

/// Parses `argv` and runs it: 0 on success, 1 on runtime failure, 2 on bad
/// arguments.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if json {
                report(true, "usage", e.to_string().trim());
            } else {
                let _ = e.print();
            }
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report(json, "runtime", &format!("{e:#}"));
            1
        }
    }
}
