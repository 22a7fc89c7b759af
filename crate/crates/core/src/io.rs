//! File formats: PNG rasters and masks, GeoJSON lines, JSON documents.
//!
//! Coordinates are pixels, origin top-left, y down. Every writer produces
//! the same bytes for the same input.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geom::{Point, Polyline};
use crate::grid::{BinaryMask, RasterImage, ScalarGrid};
use crate::vectorize::LineGraph;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Decode an 8-bit gray or RGB PNG (alpha is dropped) to `[0, 1]` samples.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<RasterImage> {
    let reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    let img = reader
        .decode()
        .map_err(|e| format_err(path, format!("not a readable PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let to_grid = |v: Vec<f64>| ScalarGrid::new(w, h, v);
    let channels = match img {
        DynamicImage::ImageLuma8(g) => vec![to_grid(g.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?],
        DynamicImage::ImageLumaA8(g) => vec![to_grid(g.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?],
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            (0..3)
                .map(|c| to_grid(rgb.pixels().map(|p| p.0[c] as f64 / 255.0).collect()))
                .collect::<Result<_>>()?
        }
        other => {
            return Err(format_err(
                path,
                format!("unsupported PNG colour type {:?}; expected 8-bit gray or RGB", other.color()),
            ))
        }
    };
    RasterImage::new(channels)
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    decode_png(&read_bytes(path)?, path)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Gray for one channel, RGB for three. Two-channel images are written as
/// gray from their first channel.
pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let ch = img.channels();
    let dynimg = if ch.len() == 3 {
        let mut buf = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            buf.extend(ch.iter().map(|c| to_u8(c.values()[i])));
        }
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, buf).expect("sized buffer"))
    } else {
        let buf = ch[0].values().iter().map(|&v| to_u8(v)).collect();
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w as u32, h as u32, buf).expect("sized buffer"))
    };
    let mut out = Cursor::new(Vec::new());
    dynimg
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::InvalidParam(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_image(path: &Path, img: &RasterImage) -> Result<()> {
    write_bytes(path, &encode_png(img)?)
}

pub fn mask_to_image(mask: &BinaryMask) -> RasterImage {
    let (w, h) = mask.dims();
    let v = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    RasterImage::gray(ScalarGrid::new(w, h, v).expect("sized buffer")).expect("samples in range")
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    encode_png(&mask_to_image(mask))
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_bytes(path, &encode_mask(mask)?)
}

/// A pixel is set when its first channel is at least one half.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let (w, h) = img.dims();
    BinaryMask::new(w, h, img.channels()[0].values().iter().map(|&v| v >= 0.5).collect())
}

/// Parse JSON, reporting syntax and schema errors with line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_json(&text, path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable value");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

/// World to pixel mapping `x' = a x + b y + c`, `y' = d x + e y + f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldToPixel {
    pub world_to_pixel: [f64; 6],
}

impl WorldToPixel {
    pub fn apply(&self, p: Point) -> Point {
        let [a, b, c, d, e, f] = self.world_to_pixel;
        (a * p.0 + b * p.1 + c, d * p.0 + e * p.1 + f)
    }
}

/// `roads.geojson` -> `roads.affine.json`.
pub fn sidecar_path(vector: &Path) -> PathBuf {
    vector.with_extension("affine.json")
}

/// LineString and MultiLineString features of a FeatureCollection. Ids come
/// from the feature `id`, then `properties.id`, then the feature index.
pub fn parse_geojson(text: &str, path: &Path) -> Result<Vec<Polyline>> {
    let doc: Value = parse_json(text, path)?;
    let bad = |m: String| format_err(path, m);
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("expected a GeoJSON FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array".into()))?;
    let mut out = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let id = match f.get("id").or_else(|| f.pointer("/properties/id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("{i}"),
        };
        let geom = f
            .get("geometry")
            .ok_or_else(|| bad(format!("feature {i}: missing geometry")))?;
        let coords = geom.get("coordinates");
        let parts: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => coords.into_iter().collect(),
            Some("MultiLineString") => coords
                .and_then(Value::as_array)
                .map(|a| a.iter().collect())
                .unwrap_or_default(),
            other => return Err(bad(format!("feature {i}: unsupported geometry {other:?}"))),
        };
        let multi = parts.len() > 1;
        for (k, part) in parts.into_iter().enumerate() {
            let pts = part
                .as_array()
                .ok_or_else(|| bad(format!("feature {i}: coordinates must be an array")))?
                .iter()
                .map(|c| match c.as_array().map(|a| a.as_slice()) {
                    Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                        (Some(x), Some(y)) => Ok((x, y)),
                        _ => Err(bad(format!("feature {i}: non-numeric coordinate"))),
                    },
                    _ => Err(bad(format!("feature {i}: coordinate must be [x, y]"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let id = if multi { format!("{id}.{k}") } else { id.clone() };
            out.push(Polyline::new(id, pts).map_err(|e| bad(format!("feature {i}: {e}")))?);
        }
    }
    Ok(out)
}

/// Read lines, applying `sidecar` (or `<name>.affine.json` next to the file,
/// when present) to map world coordinates to pixels.
pub fn read_polylines(path: &Path, sidecar: Option<&Path>) -> Result<Vec<Polyline>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let lines = parse_geojson(&text, path)?;
    let implicit = sidecar_path(path);
    let side = match sidecar {
        Some(p) => Some(p.to_path_buf()),
        None if implicit.is_file() => Some(implicit),
        None => None,
    };
    match side {
        Some(p) => {
            let t: WorldToPixel = read_json(&p)?;
            lines
                .iter()
                .map(|l| {
                    let m = l.map_points(|q| t.apply(q));
                    m.validate().map(|_| m)
                })
                .collect()
        }
        None => Ok(lines),
    }
}

fn coords(l: &Polyline) -> Value {
    Value::Array(l.points.iter().map(|p| json!([p.0, p.1])).collect())
}

pub fn polylines_to_geojson(lines: &[Polyline]) -> Value {
    let features: Vec<Value> = lines
        .iter()
        .map(|l| {
            json!({
                "type": "Feature",
                "id": l.id,
                "properties": { "id": l.id },
                "geometry": { "type": "LineString", "coordinates": coords(l) },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// One feature per edge with its end node ids, node kinds and length.
pub fn graph_to_geojson(g: &LineGraph) -> Value {
    let features: Vec<Value> = g
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            json!({
                "type": "Feature",
                "id": i,
                "properties": {
                    "id": i,
                    "node_a": e.a,
                    "node_b": e.b,
                    "kind_a": g.nodes[e.a].kind,
                    "kind_b": g.nodes[e.b].kind,
                    "length": e.length,
                },
                "geometry": { "type": "LineString", "coordinates": coords(&e.geometry) },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_polylines(path: &Path, lines: &[Polyline]) -> Result<()> {
    write_json(path, &polylines_to_geojson(lines))
}

pub fn write_graph(path: &Path, g: &LineGraph) -> Result<()> {
    write_json(path, &graph_to_geojson(g))
}

/// Lines as a graph; see [`LineGraph::from_polylines`].
pub fn read_graph(path: &Path) -> Result<LineGraph> {
    LineGraph::from_polylines(&read_polylines(path, None)?)
}
