//! Python bindings. File-based commands mirror the command line tool;
//! the in-memory helpers take nested lists.

use std::path::PathBuf;

use labelfix::io;
use labelfix::metrics;
use labelfix::pipeline::{self, PipelineConfig, SynthJob};
use labelfix::vectorize::{LineGraph, VectorizeOptions};
use labelfix::{BinaryMask, Polyline};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: labelfix::Error) -> PyErr {
    match e {
        labelfix::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_input_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = match json {
        Some(text) => io::parse_json(text, "<config>".as_ref()).map_err(err)?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn json_string<T: serde::Serialize>(v: &T) -> String {
    String::from_utf8(io::to_json_bytes(v)).expect("serde_json writes UTF-8")
}

/// Write a synthetic scene bundle to `out_dir`. `spec` is the JSON job.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, spec=None))]
fn synth(out_dir: PathBuf, seed: u64, spec: Option<&str>) -> PyResult<()> {
    let job: SynthJob = match spec {
        Some(text) => io::parse_json(text, "<spec>".as_ref()).map_err(err)?,
        None => SynthJob::default(),
    };
    let b = pipeline::synthesize(&job, seed).map_err(err)?;
    pipeline::write_bundle(&out_dir, &b).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (map, vector, out, radius=None))]
fn annotate(map: PathBuf, vector: PathBuf, out: PathBuf, radius: Option<f64>) -> PyResult<()> {
    let img = io::load_image(&map).map_err(err)?;
    let lines = io::read_polylines(&vector, None).map_err(err)?;
    let r = radius.unwrap_or_else(|| PipelineConfig::default().annotation_radius);
    let mask = pipeline::annotate(&lines, r, img.dims()).map_err(err)?;
    io::save_mask(&out, &mask).map_err(err)
}

/// Correct the annotations in `vector` against `map`, write the merged
/// mask to `out` and return the per-tile report as JSON.
#[pyfunction]
#[pyo3(signature = (map, vector, out, config_json=None))]
fn correct(map: PathBuf, vector: PathBuf, out: PathBuf, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let img = io::load_image(&map).map_err(err)?;
    let lines = io::read_polylines(&vector, None).map_err(err)?;
    let c = pipeline::correct(&img, &lines, &cfg).map_err(err)?;
    io::save_mask(&out, &c.mask).map_err(err)?;
    Ok(json_string(&c.report))
}

#[pyfunction]
fn vectorize(mask: PathBuf, out: PathBuf) -> PyResult<()> {
    let m = io::load_mask(&mask).map_err(err)?;
    let g = pipeline::vectorize_mask(&m, &VectorizeOptions::default()).map_err(err)?;
    io::write_graph(&out, &g).map_err(err)
}

/// Score line files and/or mask files; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (pred=None, gt=None, pred_mask=None, gt_mask=None, tol=5.0, spacing=50.0))]
fn evaluate(
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    pred_mask: Option<PathBuf>,
    gt_mask: Option<PathBuf>,
    tol: f64,
    spacing: f64,
) -> PyResult<String> {
    let masks = match (pred_mask, gt_mask) {
        (Some(p), Some(g)) => Some((io::load_mask(&p).map_err(err)?, io::load_mask(&g).map_err(err)?)),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("pred_mask and gt_mask go together")),
    };
    let graphs = match (pred, gt) {
        (Some(p), Some(g)) => Some((io::read_graph(&p).map_err(err)?, io::read_graph(&g).map_err(err)?)),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("pred and gt go together")),
    };
    let r = pipeline::evaluate(
        masks.as_ref().map(|(p, g)| (p, g)),
        graphs.as_ref().map(|(p, g)| (p, g)),
        tol,
        spacing,
    )
    .map_err(err)?;
    Ok(json_string(&r))
}

fn mask_from_rows(rows: Vec<Vec<bool>>) -> PyResult<BinaryMask> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    BinaryMask::new(w, h, rows.concat()).map_err(err)
}

fn graph_from(lines: Vec<Vec<(f64, f64)>>) -> PyResult<LineGraph> {
    let ls = lines
        .into_iter()
        .enumerate()
        .map(|(i, p)| Polyline::new(i.to_string(), p))
        .collect::<labelfix::Result<Vec<_>>>()
        .map_err(err)?;
    LineGraph::from_polylines(&ls).map_err(err)
}

/// Line graph of a mask given as rows of booleans, as a list of polylines.
#[pyfunction]
fn vectorize_rows(rows: Vec<Vec<bool>>) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let m = mask_from_rows(rows)?;
    let g = pipeline::vectorize_mask(&m, &VectorizeOptions::default()).map_err(err)?;
    Ok(g.edges.into_iter().map(|e| e.geometry.points).collect())
}

/// Correctness, completeness and APLS of two polyline lists.
#[pyfunction]
#[pyo3(signature = (pred, gt, tol=5.0, spacing=50.0))]
fn line_scores(
    pred: Vec<Vec<(f64, f64)>>,
    gt: Vec<Vec<(f64, f64)>>,
    tol: f64,
    spacing: f64,
) -> PyResult<(f64, f64, f64)> {
    let s = metrics::line_scores(&graph_from(pred)?, &graph_from(gt)?, tol, spacing).map_err(err)?;
    Ok((s.matching.correctness, s.matching.completeness, s.apls))
}

#[pymodule]
fn labelfix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(correct, m)?)?;
    m.add_function(wrap_pyfunction!(vectorize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(vectorize_rows, m)?)?;
    m.add_function(wrap_pyfunction!(line_scores, m)?)?;
    Ok(())
}
