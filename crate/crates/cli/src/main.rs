use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use labelfix::io;
use labelfix::lca::{Lambda, Polarity};
use labelfix::pipeline::{self, PipelineConfig, SynthJob};

/// Correct vector annotations of linear map features against the map image.
#[derive(Parser)]
#[command(name = "labelfix", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene with corrupted annotations.
    Synth(SynthArgs),
    /// Buffer annotation lines into a mask.
    Annotate(AnnotateArgs),
    /// Correct annotations tile by tile and merge the accepted masks.
    Correct(CorrectArgs),
    /// Thin a mask and extract its line graph.
    Vectorize(VectorizeArgs),
    /// Score predicted masks and/or lines against ground truth.
    Eval(EvalArgs),
    /// Overlay masks and lines on the map.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON with `scene` and `corruption` objects; omitted fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by commands that read a map and a vector file.
#[derive(Args)]
struct Common {
    /// Pipeline config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// GeoJSON LineStrings; world coordinates need an `.affine.json` sidecar.
    #[arg(long)]
    vector: Option<PathBuf>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Annotation buffer radius in pixels.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrectArgs {
    #[command(flatten)]
    common: Common,
    /// Shape-term weight, a number or `auto`.
    #[arg(long)]
    lambda: Option<Lambda>,
    #[arg(long)]
    poi_radius: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// `dark`, `light` or `any`.
    #[arg(long)]
    polarity: Option<Polarity>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Corrected mask PNG.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-tile report; defaults to the mask path with `.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VectorizeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Predicted lines (GeoJSON).
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    #[arg(long, requires = "gt_mask")]
    pred_mask: Option<PathBuf>,
    #[arg(long, requires = "pred_mask")]
    gt_mask: Option<PathBuf>,
    /// Matching tolerance in pixels.
    #[arg(long)]
    tol: Option<f64>,
    /// APLS control point spacing in pixels.
    #[arg(long)]
    spacing: Option<f64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    pred_mask: Option<PathBuf>,
    #[arg(long, requires = "pred_mask")]
    gt_mask: Option<PathBuf>,
    /// GeoJSON lines drawn on top; repeatable.
    #[arg(long)]
    lines: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined with ": ", skipping causes the previous message
/// already quotes.
fn message(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !last.contains(&s) {
            out = format!("{out}: {s}");
        }
        last = s;
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(le) = cause.downcast_ref::<labelfix::Error>() {
            return if le.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Annotate(a) => annotate(a),
        Cmd::Correct(a) => correct(a),
        Cmd::Vectorize(a) => vectorize(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Render(a) => render(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => io::read_json(p)?,
        None => PipelineConfig::default(),
    })
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Output path from the flag, else `name` under the config's `out_dir`.
fn out_path(flag: Option<PathBuf>, cfg: &PipelineConfig, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.out_dir.as_ref().map(|d| d.join(name)))
        .ok_or_else(|| usage("no output path: pass --out or set out_dir in the config"))
}

fn synth(a: SynthArgs) -> Result<()> {
    let job: SynthJob = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => SynthJob::default(),
    };
    let bundle = pipeline::synthesize(&job, a.seed)?;
    pipeline::write_bundle(&a.out, &bundle)?;
    Ok(())
}

struct Inputs {
    cfg: PipelineConfig,
    map: labelfix::RasterImage,
    lines: Vec<labelfix::Polyline>,
}

fn read_inputs(c: Common, tweak: impl FnOnce(&mut PipelineConfig)) -> Result<Inputs> {
    let mut cfg = load_config(c.config.as_deref())?;
    set(&mut cfg.map, c.map.map(Some));
    set(&mut cfg.vector, c.vector.map(Some));
    set(&mut cfg.annotation_radius, c.radius);
    tweak(&mut cfg);
    cfg.validate()?;
    let map_path = cfg.map.clone().ok_or_else(|| usage("no map: pass --map or set map in the config"))?;
    let vec_path = cfg
        .vector
        .clone()
        .ok_or_else(|| usage("no vector file: pass --vector or set vector in the config"))?;
    let map = io::load_image(&map_path)?;
    let lines = io::read_polylines(&vec_path, c.sidecar.as_deref())?;
    Ok(Inputs { cfg, map, lines })
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let inp = read_inputs(a.common, |_| {})?;
    let out = out_path(a.out, &inp.cfg, "annotation.png")?;
    let mask = pipeline::annotate(&inp.lines, inp.cfg.annotation_radius, inp.map.dims())?;
    io::save_mask(&out, &mask)?;
    Ok(())
}

fn correct(a: CorrectArgs) -> Result<()> {
    let inp = read_inputs(a.common, |cfg| {
        set(&mut cfg.lca.lambda, a.lambda);
        set(&mut cfg.tiles.poi_radius, a.poi_radius);
        set(&mut cfg.workers, a.workers);
        set(&mut cfg.lca.polarity, a.polarity);
        set(&mut cfg.tiles.window, a.window);
        set(&mut cfg.tiles.overlap, a.overlap);
        set(&mut cfg.lca.max_iters, a.max_iters);
    })?;
    let out = out_path(a.out, &inp.cfg, "corrected.png")?;
    let report = a.report.unwrap_or_else(|| out.with_extension("json"));
    let c = pipeline::correct(&inp.map, &inp.lines, &inp.cfg)?;
    if c.all_rejected() {
        eprintln!(
            "warning: all {} tiles rejected; the corrected mask is empty",
            c.report.tiles.len()
        );
    }
    io::save_mask(&out, &c.mask)?;
    io::write_json(&report, &c.report)?;
    Ok(())
}

fn vectorize(a: VectorizeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mask = io::load_mask(&a.mask)?;
    let g = pipeline::vectorize_mask(&mask, &cfg.vectorize)?;
    io::write_graph(&a.out, &g)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    set(&mut cfg.tolerance, a.tol);
    set(&mut cfg.control_spacing, a.spacing);
    cfg.validate()?;
    let masks = match (&a.pred_mask, &a.gt_mask) {
        (Some(p), Some(g)) => Some((io::load_mask(p)?, io::load_mask(g)?)),
        _ => None,
    };
    let graphs = match (&a.pred, &a.gt) {
        (Some(p), Some(g)) => Some((io::read_graph(p)?, io::read_graph(g)?)),
        _ => None,
    };
    if masks.is_none() && graphs.is_none() {
        return Err(usage("nothing to evaluate: pass --pred/--gt, --pred-mask/--gt-mask or both"));
    }
    let report = pipeline::evaluate(
        masks.as_ref().map(|(p, g)| (p, g)),
        graphs.as_ref().map(|(p, g)| (p, g)),
        cfg.tolerance,
        cfg.control_spacing,
    )?;
    match a.out {
        Some(p) => io::write_json(&p, &report)?,
        None => print!(
            "{}",
            String::from_utf8(io::to_json_bytes(&report)).map_err(|e| anyhow!(e))?
        ),
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let map = io::load_image(&a.map)?;
    let pred = a.pred_mask.as_deref().map(io::load_mask).transpose()?;
    let gt = a.gt_mask.as_deref().map(io::load_mask).transpose()?;
    let mut lines = Vec::new();
    for p in &a.lines {
        lines.extend(io::read_polylines(p, None).with_context(|| format!("reading {}", p.display()))?);
    }
    let img = pipeline::render(&map, pred.as_ref(), gt.as_ref(), &lines)?;
    io::save_image(&a.out, &img)?;
    Ok(())
}
