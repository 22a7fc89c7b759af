//! Whole-map operations: annotate, correct tile by tile, vectorize, score
//! and render overlays. The command line tool is a thin layer over these.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annot::{buffer_rasterize, make_poi, rasterize_lines, tile_windows, TileParams, TileWindow, DEFAULT_ANNOTATION_RADIUS};
use crate::error::{Error, Result};
use crate::geom::Polyline;
use crate::grid::{BinaryMask, RasterImage, ScalarGrid};
use crate::lca::{lca_run, AffineParams, LcaOptions, Polarity, Verdict};
use crate::io;
use crate::metrics::{line_scores, pixel_prf, LineScore, PixelScore, DEFAULT_CONTROL_SPACING, DEFAULT_TOLERANCE};
use crate::synth::{corrupt_annotations, gen_scene, CorruptionSpec, Scene, SynthSpec, TruthRecord};
use crate::vectorize::{vectorize, LineGraph, VectorizeOptions};

/// Settings shared by all commands. Every field has a default, so a config
/// file only needs the values it changes. Unlike the bare LCA defaults, the
/// object is assumed darker than the map background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub map: Option<PathBuf>,
    pub vector: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub annotation_radius: f64,
    pub tiles: TileParams,
    pub lca: LcaOptions,
    pub vectorize: VectorizeOptions,
    pub tolerance: f64,
    pub control_spacing: f64,
    /// 0 means one per CPU.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            map: None,
            vector: None,
            out_dir: None,
            annotation_radius: DEFAULT_ANNOTATION_RADIUS,
            tiles: TileParams::default(),
            lca: LcaOptions {
                polarity: Polarity::Dark,
                ..LcaOptions::default()
            },
            vectorize: VectorizeOptions::default(),
            tolerance: DEFAULT_TOLERANCE,
            control_spacing: DEFAULT_CONTROL_SPACING,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.annotation_radius >= 0.0) || !self.annotation_radius.is_finite() {
            return Err(Error::InvalidParam(format!(
                "annotation_radius must be >= 0, got {}",
                self.annotation_radius
            )));
        }
        if !(self.tiles.poi_radius >= self.annotation_radius) || !self.tiles.poi_radius.is_finite() {
            return Err(Error::InvalidParam(format!(
                "poi_radius ({}) must be finite and >= annotation_radius ({})",
                self.tiles.poi_radius, self.annotation_radius
            )));
        }
        if !(self.tolerance > 0.0) || !(self.control_spacing > 0.0) {
            return Err(Error::InvalidParam("tolerance and control_spacing must be > 0".into()));
        }
        self.lca.validate()
    }
}

/// Input of the `synth` command: a scene and how to corrupt its lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthJob {
    pub scene: SynthSpec,
    pub corruption: CorruptionSpec,
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub scene: Scene,
    pub annotations: Vec<Polyline>,
    pub truth: TruthRecord,
}

pub const SCENE_FILES: [&str; 5] = ["image.png", "gt.geojson", "gt_mask.png", "truth.json", "annotations.geojson"];

pub fn synthesize(job: &SynthJob, seed: u64) -> Result<SynthBundle> {
    let scene = gen_scene(&job.scene, seed)?;
    let (annotations, truth) = corrupt_annotations(&scene.gt_lines, &job.corruption, seed, job.scene.canvas)?;
    Ok(SynthBundle {
        scene,
        annotations,
        truth,
    })
}

/// Write the bundle as [`SCENE_FILES`] under `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, b: &SynthBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let [image, gt, gt_mask, truth, ann] = SCENE_FILES.map(|f| dir.join(f));
    io::save_image(&image, &b.scene.image)?;
    io::write_polylines(&gt, &b.scene.gt_lines)?;
    io::save_mask(&gt_mask, &b.scene.gt_mask)?;
    io::write_json(&truth, &b.truth)?;
    io::write_polylines(&ann, &b.annotations)
}

/// Annotation mask: the lines buffered by `radius`. Radius 0 gives the
/// one-pixel line raster instead of only the pixel centres on the lines.
pub fn annotate(lines: &[Polyline], radius: f64, dims: (usize, usize)) -> Result<BinaryMask> {
    if radius == 0.0 {
        return rasterize_lines(lines, dims);
    }
    buffer_rasterize(lines, radius, dims)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileReport {
    pub index: usize,
    pub window: TileWindow,
    pub verdict: Verdict,
    pub final_affine: AffineParams,
    pub iterations: usize,
    pub lambda: f64,
    pub coverage: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energies: Vec<f64>,
    pub prior_pixels: usize,
    pub corrected_pixels: usize,
    pub scale_clamped: bool,
    pub shrink_invariants_held: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<TileReport>,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Correction {
    /// OR of the accepted tiles' corrected masks.
    pub mask: BinaryMask,
    pub report: CorrectionReport,
}

impl Correction {
    pub fn all_rejected(&self) -> bool {
        self.report.accepted == 0
    }
}

/// Correct every tile independently and OR the accepted results into one
/// canvas. Tiles run on `workers` threads; the output does not depend on
/// the worker count.
pub fn correct(img: &RasterImage, lines: &[Polyline], cfg: &PipelineConfig) -> Result<Correction> {
    cfg.validate()?;
    let dims = img.dims();
    let windows = if lines.is_empty() {
        Vec::new()
    } else {
        tile_windows(lines, dims, &cfg.tiles)?
    };
    let run = || -> Result<Vec<(TileReport, BinaryMask)>> {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| correct_tile(img, lines, w, i, cfg))
            .collect()
    };
    let results = if cfg.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidParam(format!("cannot start worker pool: {e}")))?
            .install(run)?
    };
    let mut mask = BinaryMask::empty(dims.0, dims.1);
    let mut tiles = Vec::with_capacity(results.len());
    for (rep, tile_mask) in results {
        if rep.verdict == Verdict::Accepted {
            tile_mask.or_into(&mut mask, rep.window.origin.0, rep.window.origin.1);
        }
        tiles.push(rep);
    }
    let accepted = tiles.iter().filter(|t| t.verdict == Verdict::Accepted).count();
    Ok(Correction {
        mask,
        report: CorrectionReport {
            width: dims.0,
            height: dims.1,
            rejected: tiles.len() - accepted,
            accepted,
            tiles,
        },
    })
}

fn correct_tile(
    img: &RasterImage,
    lines: &[Polyline],
    w: &TileWindow,
    index: usize,
    cfg: &PipelineConfig,
) -> Result<(TileReport, BinaryMask)> {
    let (x0, y0) = w.origin;
    let local: Vec<Polyline> = lines
        .iter()
        .filter(|l| w.source_polyline_ids.contains(&l.id))
        .map(|l| l.map_points(|p| (p.0 - x0 as f64, p.1 - y0 as f64)))
        .collect();
    let dims = (w.width, w.height);
    let crop = img.crop(x0, y0, w.width, w.height);
    let prior = buffer_rasterize(&local, cfg.annotation_radius, dims)?;
    let poi = make_poi(&local, cfg.tiles.poi_radius, dims)?;
    let r = lca_run(&crop, &prior, &poi, &cfg.lca)?;
    let energies: Vec<f64> = r.trace.iter().map(|t| t.energy).collect();
    let report = TileReport {
        index,
        window: w.clone(),
        verdict: r.verdict,
        final_affine: r.final_affine,
        iterations: r.iterations,
        lambda: r.lambda,
        coverage: r.coverage,
        initial_energy: energies.first().copied().unwrap_or(0.0),
        final_energy: energies.last().copied().unwrap_or(0.0),
        energies,
        prior_pixels: prior.count(),
        corrected_pixels: r.corrected_mask.count(),
        scale_clamped: r.scale_clamped,
        shrink_invariants_held: r.shrink_invariants_held,
        degenerate: r.degenerate,
    };
    Ok((report, r.corrected_mask))
}

pub fn vectorize_mask(mask: &BinaryMask, opts: &VectorizeOptions) -> Result<LineGraph> {
    vectorize(mask, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub tolerance: f64,
    pub control_spacing: f64,
    pub snap_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pixel: Option<PixelScore>,
    pub lines: Option<LineScore>,
    pub params: EvalParams,
}

/// Score masks, line graphs or both; at least one pair is required.
pub fn evaluate(
    masks: Option<(&BinaryMask, &BinaryMask)>,
    graphs: Option<(&LineGraph, &LineGraph)>,
    tolerance: f64,
    control_spacing: f64,
) -> Result<EvalReport> {
    if masks.is_none() && graphs.is_none() {
        return Err(Error::InvalidParam("nothing to evaluate: give masks, line graphs or both".into()));
    }
    let pixel = masks.map(|(p, g)| pixel_prf(p, g)).transpose()?;
    let lines = graphs
        .map(|(p, g)| line_scores(p, g, tolerance, control_spacing))
        .transpose()?;
    Ok(EvalReport {
        pixel,
        lines,
        params: EvalParams {
            tolerance,
            control_spacing,
            snap_radius: tolerance,
        },
    })
}

pub const TP_COLOUR: [f64; 3] = [0.0, 0.8, 0.0];
pub const FP_COLOUR: [f64; 3] = [0.9, 0.0, 0.0];
pub const LINE_COLOUR: [f64; 3] = [0.0, 0.3, 1.0];

/// Paint `pred` over the map: green where `gt` agrees (or everywhere when no
/// `gt` is given), red where it does not. `lines` are drawn on top, one
/// pixel wide. With nothing to draw the map comes back unchanged.
pub fn render(
    map: &RasterImage,
    pred: Option<&BinaryMask>,
    gt: Option<&BinaryMask>,
    lines: &[Polyline],
) -> Result<RasterImage> {
    let dims = map.dims();
    for m in pred.iter().chain(gt.iter()) {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch);
        }
    }
    if pred.is_none() && lines.is_empty() {
        return Ok(map.clone());
    }
    let (w, h) = dims;
    let ch = map.channels();
    let mut rgb: Vec<Vec<f64>> = (0..3).map(|c| ch[c.min(ch.len() - 1)].values().to_vec()).collect();
    let mut paint = |mask: &BinaryMask, colour: [f64; 3]| {
        for (i, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
            for (c, v) in rgb.iter_mut().zip(colour) {
                c[i] = v;
            }
        }
    };
    if let Some(p) = pred {
        match gt {
            Some(g) => {
                paint(&p.and(g), TP_COLOUR);
                paint(&p.and_not(g), FP_COLOUR);
            }
            None => paint(p, TP_COLOUR),
        }
    }
    if !lines.is_empty() {
        paint(&buffer_rasterize(lines, 0.75, dims)?, LINE_COLOUR);
    }
    RasterImage::new(
        rgb.into_iter()
            .map(|v| ScalarGrid::new(w, h, v))
            .collect::<Result<Vec<_>>>()?,
    )
}
