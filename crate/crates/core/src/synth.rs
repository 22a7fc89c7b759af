//! Seeded synthetic "scanned maps" with known line geometry, plus controlled
//! corruption of the matching annotations.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`, so a seed gives
//! the same scene on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annot::buffer_rasterize;
use crate::error::{Error, Result};
use crate::geom::{project_on_segment, Point, Polyline};
use crate::grid::{BinaryMask, RasterImage, ScalarGrid};

/// Paper colour of the background, in 8-bit steps so PNG round trips are exact.
pub const PAPER_RGB: [u8; 3] = [238, 230, 210];
/// How much darker clutter is than the paper.
pub const CLUTTER_DARKEN: f64 = 0.2;
/// Minimum distance between a false annotation and every true line.
pub const FALSE_LINE_CLEARANCE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat,
    Noise { sigma: f64 },
    /// `density` strokes or discs per 100x100 pixels.
    Clutter { density: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineStyle {
    Solid,
    Dashed { period: f64, duty: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// (width, height)
    pub canvas: (usize, usize),
    pub line_width: f64,
    pub line_contrast: f64,
    pub background: Background,
    pub n_lines: usize,
    pub style: LineStyle,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            canvas: (256, 256),
            line_width: 5.0,
            line_contrast: 0.6,
            background: Background::Clutter { density: 1.0 },
            n_lines: 3,
            style: LineStyle::Solid,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        let (w, h) = self.canvas;
        if w < 16 || h < 16 {
            return bad(format!("canvas must be at least 16x16, got {w}x{h}"));
        }
        if !(self.line_width >= 1.0) || !self.line_width.is_finite() {
            return bad(format!("line_width must be >= 1, got {}", self.line_width));
        }
        if !(self.line_contrast > 0.0 && self.line_contrast <= 1.0) {
            return bad(format!("line_contrast must be in (0, 1], got {}", self.line_contrast));
        }
        match self.background {
            Background::Noise { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => {
                return bad(format!("noise sigma must be >= 0, got {sigma}"))
            }
            Background::Clutter { density } if !(density >= 0.0) || !density.is_finite() => {
                return bad(format!("clutter density must be >= 0, got {density}"))
            }
            _ => {}
        }
        if let LineStyle::Dashed { period, duty } = self.style {
            if !(period > 0.0) || !period.is_finite() || !(duty > 0.0 && duty <= 1.0) {
                return bad(format!("dash period must be > 0 and duty in (0, 1], got {period}, {duty}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub translate_max: f64,
    /// Radians.
    pub rotate_max: f64,
    pub scale_jitter: f64,
    pub shear_max: f64,
    pub false_fraction: f64,
    pub drop_fraction: f64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("translate_max", self.translate_max),
            ("rotate_max", self.rotate_max),
            ("scale_jitter", self.scale_jitter),
            ("shear_max", self.shear_max),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.scale_jitter >= 1.0 {
            return Err(Error::InvalidParam("scale_jitter must be < 1".into()));
        }
        for (name, v) in [
            ("false_fraction", self.false_fraction),
            ("drop_fraction", self.drop_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParam(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RasterImage,
    pub gt_lines: Vec<Polyline>,
    pub gt_mask: BinaryMask,
}

/// Affine applied to one annotation: `p' = p + (M - I)(p - centre) + t` with
/// `M = R(theta) * [[scale, shear], [0, scale]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineAffine {
    pub centre: Point,
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    pub scale: f64,
    pub shear: f64,
}

impl LineAffine {
    pub fn apply(&self, p: Point) -> Point {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let m = [
            [c * self.scale, c * self.shear - s * self.scale],
            [s * self.scale, s * self.shear + c * self.scale],
        ];
        let (dx, dy) = (p.0 - self.centre.0, p.1 - self.centre.1);
        (
            p.0 + (m[0][0] - 1.0) * dx + m[0][1] * dy + self.tx,
            p.1 + m[1][0] * dx + (m[1][1] - 1.0) * dy + self.ty,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineStatus {
    True,
    False,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineTruth {
    /// Id of the emitted annotation.
    pub id: String,
    /// Ground-truth line it came from.
    pub source_id: String,
    pub status: LineStatus,
    /// `None` for false annotations.
    pub affine: Option<LineAffine>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthRecord {
    pub lines: Vec<LineTruth>,
    pub dropped: Vec<String>,
}

/// Draw a scene: paper background, optional texture, then `n_lines` random
/// polylines darkened by `line_contrast`.
pub fn gen_scene(spec: &SynthSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = spec.canvas;
    let paper = PAPER_RGB.map(|v| v as f64 / 255.0);
    let mut rgb: Vec<Vec<f64>> = paper.iter().map(|&v| vec![v; w * h]).collect();

    match spec.background {
        Background::Flat => {}
        Background::Noise { sigma } => {
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
                for i in 0..w * h {
                    let d: f64 = n.sample(&mut rng);
                    for ch in rgb.iter_mut() {
                        ch[i] = (ch[i] + d).clamp(0.0, 1.0);
                    }
                }
            }
        }
        Background::Clutter { density } => {
            let clutter = clutter_mask(&mut rng, (w, h), density)?;
            for (i, _) in clutter.bits().iter().enumerate().filter(|(_, &b)| b) {
                for (ch, p) in rgb.iter_mut().zip(paper) {
                    ch[i] = quantize(p - CLUTTER_DARKEN);
                }
            }
        }
    }

    let margin = margin_for((w, h));
    let gt_lines: Vec<Polyline> = (0..spec.n_lines)
        .map(|i| random_polyline(&mut rng, (w, h), margin, format!("line-{i}")))
        .collect::<Result<_>>()?;
    let gt_mask = buffer_rasterize(&gt_lines, spec.line_width / 2.0, (w, h))?;
    for y in 0..h {
        for x in 0..w {
            if !gt_mask.get(x, y) || !inked(spec, &gt_lines, (x as f64, y as f64)) {
                continue;
            }
            let i = y * w + x;
            for (ch, p) in rgb.iter_mut().zip(paper) {
                ch[i] = quantize(p - spec.line_contrast);
            }
        }
    }
    let channels = rgb
        .into_iter()
        .map(|v| ScalarGrid::new(w, h, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        image: RasterImage::new(channels)?,
        gt_lines,
        gt_mask,
    })
}

/// Misalign, falsify and drop annotations. `canvas` bounds where false
/// lines may be placed.
pub fn corrupt_annotations(
    gt_lines: &[Polyline],
    cspec: &CorruptionSpec,
    seed: u64,
    canvas: (usize, usize),
) -> Result<(Vec<Polyline>, TruthRecord)> {
    cspec.validate()?;
    for l in gt_lines {
        l.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = gt_lines.len();
    let n_drop = (cspec.drop_fraction * n as f64).round() as usize;
    let n_false = ((cspec.false_fraction * n as f64).round() as usize).min(n - n_drop);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut fate = vec![LineStatus::True; n];
    let mut dropped = vec![false; n];
    for &i in &order[..n_drop] {
        dropped[i] = true;
    }
    for &i in &order[n_drop..n_drop + n_false] {
        fate[i] = LineStatus::False;
    }

    let mut out = Vec::new();
    let mut record = TruthRecord::default();
    for (i, line) in gt_lines.iter().enumerate() {
        if dropped[i] {
            record.dropped.push(line.id.clone());
            continue;
        }
        let (geometry, affine) = match fate[i] {
            LineStatus::True => {
                let a = random_affine(&mut rng, cspec, centre(line));
                (line.map_points(|p| a.apply(p)), Some(a))
            }
            LineStatus::False => (false_line(&mut rng, gt_lines, canvas, &line.id)?, None),
        };
        record.lines.push(LineTruth {
            id: geometry.id.clone(),
            source_id: line.id.clone(),
            status: fate[i],
            affine,
        });
        out.push(geometry);
    }
    Ok((out, record))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn margin_for((w, h): (usize, usize)) -> f64 {
    (w.min(h) as f64 * 0.1).clamp(2.0, 24.0)
}

fn sym(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

fn centre(line: &Polyline) -> Point {
    let n = line.points.len() as f64;
    let (sx, sy) = line
        .points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    (sx / n, sy / n)
}

fn random_affine(rng: &mut ChaCha8Rng, c: &CorruptionSpec, centre: Point) -> LineAffine {
    LineAffine {
        centre,
        tx: sym(rng, c.translate_max),
        ty: sym(rng, c.translate_max),
        theta: sym(rng, c.rotate_max),
        scale: 1.0 + sym(rng, c.scale_jitter),
        shear: sym(rng, c.shear_max),
    }
}

/// 2-4 segments of 40-120 px (shorter on small canvases) turning 20-60
/// degrees at each vertex, kept `margin` away from the border.
fn random_polyline(
    rng: &mut ChaCha8Rng,
    (w, h): (usize, usize),
    margin: f64,
    id: String,
) -> Result<Polyline> {
    let (x_hi, y_hi) = (w as f64 - 1.0 - margin, h as f64 - 1.0 - margin);
    let span = (x_hi - margin).min(y_hi - margin);
    let (lmin, lmax) = (40f64.min(span * 0.3), 120f64.min(span * 0.6));
    let inside = |p: Point| p.0 >= margin && p.0 <= x_hi && p.1 >= margin && p.1 <= y_hi;
    for _ in 0..200 {
        let mut p = (rng.random_range(margin..=x_hi), rng.random_range(margin..=y_hi));
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let segs = rng.random_range(2..=4);
        let mut pts = vec![p];
        for k in 0..segs {
            if k > 0 {
                let turn: f64 = rng.random_range(20.0f64..=60.0).to_radians();
                heading += if rng.random_bool(0.5) { turn } else { -turn };
            }
            let len = rng.random_range(lmin..=lmax);
            p = (p.0 + len * heading.cos(), p.1 + len * heading.sin());
            pts.push(p);
        }
        if pts.iter().all(|&q| inside(q)) {
            return Polyline::new(id, pts);
        }
    }
    // Give up on randomness: a diagonal across the usable box.
    Polyline::new(id, vec![(margin, margin), (x_hi, y_hi)])
}

/// A random polyline as far as possible (best of 200 draws, stopping at the
/// clearance) from every ground-truth line.
fn false_line(
    rng: &mut ChaCha8Rng,
    gt: &[Polyline],
    canvas: (usize, usize),
    source: &str,
) -> Result<Polyline> {
    let margin = margin_for(canvas);
    let clearance = |l: &Polyline| {
        l.points
            .iter()
            .chain(&sample(l, 2.0))
            .map(|&p| gt.iter().map(|g| g.distance_to(p)).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best: Option<(f64, Polyline)> = None;
    for _ in 0..200 {
        let cand = random_polyline(rng, canvas, margin, format!("{source}-false"))?;
        let c = clearance(&cand);
        if best.as_ref().is_none_or(|(b, _)| c > *b) {
            best = Some((c, cand));
        }
        if c >= FALSE_LINE_CLEARANCE {
            break;
        }
    }
    Ok(best.expect("at least one draw").1)
}

fn sample(l: &Polyline, step: f64) -> Vec<Point> {
    let len = l.length();
    let n = (len / step).ceil() as usize;
    (0..=n).map(|i| l.point_at(len * i as f64 / n.max(1) as f64)).collect()
}

/// Whether the line nearest to `p` is "on" there (always for solid lines).
fn inked(spec: &SynthSpec, lines: &[Polyline], p: Point) -> bool {
    let LineStyle::Dashed { period, duty } = spec.style else {
        return true;
    };
    let mut best = (f64::INFINITY, 0.0);
    for l in lines {
        let mut arc = 0.0;
        for (a, b) in l.segments() {
            let (q, t) = project_on_segment(p, a, b);
            let d = (q.0 - p.0).hypot(q.1 - p.1);
            let seg = (b.0 - a.0).hypot(b.1 - a.1);
            if d < best.0 {
                best = (d, arc + t * seg);
            }
            arc += seg;
        }
    }
    (best.1 / period).fract() < duty
}

fn clutter_mask(rng: &mut ChaCha8Rng, (w, h): (usize, usize), density: f64) -> Result<BinaryMask> {
    let count = (density * (w * h) as f64 / 10_000.0).round() as usize;
    let mut mask = BinaryMask::empty(w, h);
    for _ in 0..count {
        let c = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let stroke = if rng.random_bool(0.5) {
            let len: f64 = rng.random_range(8.0..30.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let r: f64 = rng.random_range(0.5..1.5);
            let d = (a.cos() * len / 2.0, a.sin() * len / 2.0);
            let l = Polyline::new("clutter", vec![(c.0 - d.0, c.1 - d.1), (c.0 + d.0, c.1 + d.1)])?;
            buffer_rasterize(&[l], r, (w, h))?
        } else {
            let r: f64 = rng.random_range(2.0..6.0);
            BinaryMask::from_fn(w, h, |x, y| (x as f64 - c.0).hypot(y as f64 - c.1) <= r)
        };
        mask = mask.or(&stroke);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::total_length;
    use std::collections::BTreeSet;

    fn flat(n_lines: usize) -> SynthSpec {
        SynthSpec {
            background: Background::Flat,
            n_lines,
            ..SynthSpec::default()
        }
    }

    fn colours(img: &RasterImage) -> BTreeSet<Vec<u64>> {
        (0..img.width() * img.height())
            .map(|i| img.pixel(i).map(f64::to_bits).collect())
            .collect()
    }

    #[test]
    fn flat_single_line_has_two_colours() {
        let s = gen_scene(&flat(1), 3).unwrap();
        assert_eq!(colours(&s.image).len(), 2);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SynthSpec {
            background: Background::Noise { sigma: 0.05 },
            style: LineStyle::Dashed { period: 20.0, duty: 0.6 },
            ..SynthSpec::default()
        };
        assert_eq!(gen_scene(&spec, 11).unwrap(), gen_scene(&spec, 11).unwrap());
        assert_ne!(gen_scene(&spec, 11).unwrap(), gen_scene(&spec, 12).unwrap());
        let spec = SynthSpec::default();
        assert_eq!(gen_scene(&spec, 5).unwrap(), gen_scene(&spec, 5).unwrap());
    }

    #[test]
    fn no_lines_is_pure_background() {
        let s = gen_scene(&flat(0), 1).unwrap();
        assert!(s.gt_lines.is_empty());
        assert!(s.gt_mask.is_all_false());
        assert_eq!(colours(&s.image).len(), 1);
    }

    #[test]
    fn dashes_leave_gaps() {
        let spec = SynthSpec {
            style: LineStyle::Dashed { period: 20.0, duty: 0.5 },
            ..flat(1)
        };
        let s = gen_scene(&spec, 2).unwrap();
        let dark = s.image.channels()[0]
            .values()
            .iter()
            .filter(|&&v| v < PAPER_RGB[0] as f64 / 255.0)
            .count();
        let frac = dark as f64 / s.gt_mask.count() as f64;
        assert!(frac > 0.35 && frac < 0.65, "{frac}");
    }

    #[test]
    fn mask_area_matches_length_times_width() {
        for seed in 0..10 {
            let spec = SynthSpec::default();
            let s = gen_scene(&spec, seed).unwrap();
            let expected = total_length(&s.gt_lines) * spec.line_width;
            let got = s.gt_mask.count() as f64;
            // Crossing lines share pixels, so only check scenes where they don't.
            let solo: usize = s
                .gt_lines
                .iter()
                .map(|l| buffer_rasterize(std::slice::from_ref(l), 2.5, spec.canvas).unwrap().count())
                .sum();
            if solo == s.gt_mask.count() {
                assert!((got - expected).abs() <= 0.1 * expected, "seed {seed}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn identity_corruption_is_exact() {
        let s = gen_scene(&SynthSpec::default(), 4).unwrap();
        let (out, rec) = corrupt_annotations(&s.gt_lines, &CorruptionSpec::default(), 9, (256, 256)).unwrap();
        assert_eq!(out, s.gt_lines);
        assert!(rec.dropped.is_empty());
        assert!(rec.lines.iter().all(|l| l.status == LineStatus::True));
    }

    #[test]
    fn translation_bound() {
        let c = CorruptionSpec {
            translate_max: 10.0,
            ..CorruptionSpec::default()
        };
        for seed in 0..20 {
            let s = gen_scene(&SynthSpec::default(), seed).unwrap();
            let (out, _) = corrupt_annotations(&s.gt_lines, &c, seed, (256, 256)).unwrap();
            for (a, b) in out.iter().zip(&s.gt_lines) {
                for (p, q) in a.points.iter().zip(&b.points) {
                    assert!((p.0 - q.0).hypot(p.1 - q.1) <= 10.0 * 2f64.sqrt() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn rotation_bound() {
        let c = CorruptionSpec {
            translate_max: 8.0,
            rotate_max: 3f64.to_radians(),
            ..CorruptionSpec::default()
        };
        let s = gen_scene(&SynthSpec::default(), 1).unwrap();
        let (out, rec) = corrupt_annotations(&s.gt_lines, &c, 1, (256, 256)).unwrap();
        for ((a, b), t) in out.iter().zip(&s.gt_lines).zip(&rec.lines) {
            let cen = t.affine.unwrap().centre;
            for (p, q) in a.points.iter().zip(&b.points) {
                let r = (q.0 - cen.0).hypot(q.1 - cen.1);
                let slack = 2.0 * r * (3f64.to_radians() / 2.0).sin();
                assert!((p.0 - q.0).hypot(p.1 - q.1) <= 8.0 * 2f64.sqrt() + slack + 1e-9);
            }
        }
    }

    #[test]
    fn false_lines_avoid_truth() {
        let c = CorruptionSpec {
            false_fraction: 1.0,
            ..CorruptionSpec::default()
        };
        for seed in 0..10 {
            let spec = SynthSpec {
                n_lines: 2,
                ..SynthSpec::default()
            };
            let s = gen_scene(&spec, seed).unwrap();
            let (out, rec) = corrupt_annotations(&s.gt_lines, &c, seed, spec.canvas).unwrap();
            assert_eq!(out.len(), 2);
            assert!(rec.lines.iter().all(|l| l.status == LineStatus::False && l.affine.is_none()));
            for l in &out {
                let m = buffer_rasterize(std::slice::from_ref(l), 2.5, spec.canvas).unwrap();
                let hit = m.and(&s.gt_mask).count() as f64 / m.count() as f64;
                assert!(hit < 0.05, "seed {seed}: {hit}");
            }
        }
    }

    #[test]
    fn drop_and_false_counts() {
        let spec = SynthSpec {
            n_lines: 4,
            ..SynthSpec::default()
        };
        let s = gen_scene(&spec, 0).unwrap();
        let c = CorruptionSpec {
            drop_fraction: 0.25,
            false_fraction: 0.5,
            ..CorruptionSpec::default()
        };
        let (out, rec) = corrupt_annotations(&s.gt_lines, &c, 0, spec.canvas).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(rec.dropped.len(), 1);
        let n_false = rec.lines.iter().filter(|l| l.status == LineStatus::False).count();
        assert_eq!(n_false, 2);
    }

    #[test]
    fn invalid_specs() {
        let s = SynthSpec {
            line_width: 0.5,
            ..SynthSpec::default()
        };
        assert!(gen_scene(&s, 0).is_err());
        let c = CorruptionSpec {
            false_fraction: 1.5,
            ..CorruptionSpec::default()
        };
        assert!(corrupt_annotations(&[], &c, 0, (64, 64)).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = SynthSpec {
            background: Background::Noise { sigma: 0.1 },
            style: LineStyle::Dashed { period: 12.0, duty: 0.5 },
            ..SynthSpec::default()
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SynthSpec>(&j).unwrap(), s);
        let partial: SynthSpec = serde_json::from_str(r#"{"n_lines": 1}"#).unwrap();
        assert_eq!(partial.n_lines, 1);
        assert_eq!(partial.canvas, (256, 256));
    }
}
