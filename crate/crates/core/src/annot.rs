//! Annotation masks from vector polylines: buffering, pixels-of-interest and
//! per-feature processing windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, point_segment_dist2};
use crate::grid::BinaryMask;

pub use crate::geom::Polyline;

/// Default PoI buffer radius in pixels.
pub const POI_RADIUS: f64 = 30.0;
/// Default annotation radii for the three reference feature groups.
pub const ANNOTATION_RADII: [f64; 3] = [5.0, 5.0, 3.0];
pub const DEFAULT_ANNOTATION_RADIUS: f64 = ANNOTATION_RADII[0];
pub const DEFAULT_WINDOW: usize = 128;
pub const DEFAULT_OVERLAP: usize = 32;
pub const MIN_WINDOW: usize = 32;

/// Set every pixel whose centre lies within `radius` of some segment.
///
/// Pixel `(x, y)` has its centre at `(x, y)`. Caps are round.
pub fn buffer_rasterize(
    lines: &[Polyline],
    radius: f64,
    canvas: (usize, usize),
) -> Result<BinaryMask> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParam(format!("radius must be >= 0, got {radius}")));
    }
    let (w, h) = canvas;
    let mut mask = BinaryMask::empty(w, h);
    let r2 = radius * radius;
    for line in lines {
        line.validate()?;
        for (a, b) in line.segments() {
            let x_lo = (a.0.min(b.0) - radius).ceil().max(0.0);
            let y_lo = (a.1.min(b.1) - radius).ceil().max(0.0);
            let x_hi = (a.0.max(b.0) + radius).floor().min(w as f64 - 1.0);
            let y_hi = (a.1.max(b.1) + radius).floor().min(h as f64 - 1.0);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            for y in y_lo as usize..=y_hi as usize {
                for x in x_lo as usize..=x_hi as usize {
                    if !mask.get(x, y) && point_segment_dist2((x as f64, y as f64), a, b) <= r2 {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// One-pixel, 8-connected raster of the lines: each segment is sampled once
/// per step along its major axis and rounded to the nearest pixel.
pub fn rasterize_lines(lines: &[Polyline], canvas: (usize, usize)) -> Result<BinaryMask> {
    let (w, h) = canvas;
    let mut mask = BinaryMask::empty(w, h);
    for line in lines {
        line.validate()?;
        for (a, b) in line.segments() {
            let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let x = (a.0 + (b.0 - a.0) * t).round();
                let y = (a.1 + (b.1 - a.1) * t).round();
                if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Pixels-of-interest mask: a wide buffer that must contain the true object.
pub fn make_poi(lines: &[Polyline], radius: f64, canvas: (usize, usize)) -> Result<BinaryMask> {
    buffer_rasterize(lines, radius, canvas)
}

/// Rectangular crop of the map processed as one correction problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWindow {
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub source_polyline_ids: Vec<String>,
}

impl TileWindow {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.origin.0
            && y >= self.origin.1
            && x < self.origin.0 + self.width
            && y < self.origin.1 + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileParams {
    pub window: usize,
    pub overlap: usize,
    pub poi_radius: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            poi_radius: POI_RADIUS,
        }
    }
}

/// Windows along each polyline covering its `poi_radius` buffer.
///
/// Windows are emitted per line in input order. A line whose buffered
/// bounding box fits in one window gets exactly one, centred on that box;
/// longer lines get windows centred at points spaced evenly along the arc,
/// close enough that consecutive windows share at least `overlap` pixels
/// and every buffered pixel falls in some window.
pub fn tile_windows(
    lines: &[Polyline],
    map_dims: (usize, usize),
    params: &TileParams,
) -> Result<Vec<TileWindow>> {
    let TileParams {
        window,
        overlap,
        poi_radius,
    } = *params;
    if window <= 2 * overlap {
        return Err(Error::InvalidParam(format!(
            "window ({window}) must exceed twice the overlap ({overlap})"
        )));
    }
    if window < MIN_WINDOW {
        return Err(Error::InvalidParam(format!("window must be >= {MIN_WINDOW}")));
    }
    let (mw, mh) = map_dims;
    if mw < MIN_WINDOW || mh < MIN_WINDOW {
        return Err(Error::InvalidParam(format!(
            "map must be at least {MIN_WINDOW}x{MIN_WINDOW}"
        )));
    }
    let (ww, wh) = (window.min(mw), window.min(mh));
    // Centre-to-edge slack needed so a window centred within stride/2 of a
    // line point still holds that point's whole buffer disc.
    let stride = (window - overlap).min(window.saturating_sub(2 * poi_radius.ceil() as usize + 4));
    if stride == 0 {
        return Err(Error::InvalidParam(format!(
            "window ({window}) too small for PoI radius {poi_radius}"
        )));
    }
    let place = |c: f64, size: usize, dim: usize| -> usize {
        let o = (c - size as f64 / 2.0).round().max(0.0) as usize;
        o.min(dim - size)
    };

    let mut out = Vec::new();
    for line in lines {
        line.validate()?;
        let (x0, y0, x1, y1) = line.bounds();
        let fits = (x1 - x0) + 2.0 * poi_radius < ww as f64 - 3.0
            && (y1 - y0) + 2.0 * poi_radius < wh as f64 - 3.0;
        let centres: Vec<(f64, f64)> = if fits {
            vec![((x0 + x1) / 2.0, (y0 + y1) / 2.0)]
        } else {
            let len = line.length();
            let n = (len / stride as f64).ceil().max(1.0) as usize;
            (0..=n).map(|i| line.point_at(len * i as f64 / n as f64)).collect()
        };
        let mut last: Option<(usize, usize)> = None;
        for c in centres {
            let origin = (place(c.0, ww, mw), place(c.1, wh, mh));
            if last == Some(origin) {
                continue;
            }
            last = Some(origin);
            out.push(TileWindow {
                origin,
                width: ww,
                height: wh,
                source_polyline_ids: vec![line.id.clone()],
            });
        }
    }
    Ok(out)
}

/// Total arc length of a set of lines.
pub fn total_length(lines: &[Polyline]) -> f64 {
    lines
        .iter()
        .map(|l| l.points.windows(2).map(|w| dist(w[0], w[1])).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: (f64, f64), b: (f64, f64)) -> Polyline {
        Polyline::new("s", vec![a, b]).unwrap()
    }

    /// Independent distance: endpoint distance when the foot falls outside
    /// the segment, perpendicular distance otherwise.
    fn oracle_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
        let d2 = |u: (f64, f64), v: (f64, f64)| (u.0 - v.0).powi(2) + (u.1 - v.1).powi(2);
        let (abx, aby) = (b.0 - a.0, b.1 - a.1);
        if (p.0 - a.0) * abx + (p.1 - a.1) * aby <= 0.0 {
            return d2(p, a);
        }
        if (p.0 - b.0) * -abx + (p.1 - b.1) * -aby <= 0.0 {
            return d2(p, b);
        }
        let cross = abx * (p.1 - a.1) - aby * (p.0 - a.0);
        cross * cross / (abx * abx + aby * aby)
    }

    fn oracle_mask(lines: &[Polyline], r: f64, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            lines.iter().any(|l| {
                l.segments()
                    .any(|(a, b)| oracle_dist2((x as f64, y as f64), a, b) <= r * r)
            })
        })
    }

    #[test]
    fn zero_radius_horizontal_segment() {
        let m = buffer_rasterize(&[seg((2.0, 5.0), (9.0, 5.0))], 0.0, (12, 12)).unwrap();
        assert_eq!(m.count(), 8);
        for x in 2..=9 {
            assert!(m.get(x, 5));
        }
    }

    #[test]
    fn radius_two_matches_brute_force() {
        let lines = [seg((2.0, 5.0), (9.0, 5.0))];
        let m = buffer_rasterize(&lines, 2.0, (12, 12)).unwrap();
        assert_eq!(m, oracle_mask(&lines, 2.0, 12, 12));
    }

    #[test]
    fn empty_lines_give_empty_mask() {
        assert!(buffer_rasterize(&[], 3.0, (5, 5)).unwrap().is_all_false());
        assert!(buffer_rasterize(&[], -1.0, (5, 5)).is_err());
    }

    #[test]
    fn poi_examples() {
        let lines = [seg((2.0, 5.0), (9.0, 5.0))];
        let poi = make_poi(&lines, POI_RADIUS, (12, 12)).unwrap();
        assert!(poi.count() == 144);
        let ann = buffer_rasterize(&lines, 5.0, (12, 12)).unwrap();
        assert!(ann.is_subset_of(&poi));

        let short = [seg((40.0, 40.0), (41.0, 40.0))];
        let poi = make_poi(&short, 30.0, (96, 96)).unwrap();
        assert_eq!(poi, oracle_mask(&short, 30.0, 96, 96));
        assert!(poi.get(40, 10) && poi.get(71, 40) && !poi.get(40, 9) && !poi.get(72, 40));
    }

    #[test]
    fn one_short_line_one_tile() {
        let t = tile_windows(&[seg((50.0, 60.0), (70.0, 62.0))], (500, 400), &TileParams::default())
            .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].source_polyline_ids, vec!["s".to_string()]);
        assert!(tile_windows(&[], (500, 400), &TileParams::default()).unwrap().is_empty());
    }

    #[test]
    fn long_line_tiles_cover_buffer() {
        let lines = [seg((40.0, 100.0), (340.0, 110.0))];
        let dims = (400, 220);
        let tiles = tile_windows(&lines, dims, &TileParams::default()).unwrap();
        assert!(tiles.len() > 1);
        let poi = make_poi(&lines, POI_RADIUS, dims).unwrap();
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                if poi.get(x, y) {
                    assert!(tiles.iter().any(|t| t.contains(x, y)), "({x},{y}) uncovered");
                }
            }
        }
        for w in tiles.windows(2) {
            let ox = (w[0].origin.0 + w[0].width).min(w[1].origin.0 + w[1].width) as i64
                - w[0].origin.0.max(w[1].origin.0) as i64;
            let oy = (w[0].origin.1 + w[0].height).min(w[1].origin.1 + w[1].height) as i64
                - w[0].origin.1.max(w[1].origin.1) as i64;
            assert!(ox >= DEFAULT_OVERLAP as i64 && oy >= DEFAULT_OVERLAP as i64);
        }
    }

    #[test]
    fn tile_param_validation() {
        let p = TileParams {
            window: 64,
            overlap: 32,
            poi_radius: 30.0,
        };
        assert!(tile_windows(&[], (100, 100), &p).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_lines() -> impl Strategy<Value = Vec<Polyline>> {
            prop::collection::vec(
                prop::collection::vec((0.0f64..64.0, 0.0f64..64.0), 2..5),
                0..3,
            )
            .prop_map(|ls| {
                ls.into_iter()
                    .enumerate()
                    .filter_map(|(i, pts)| {
                        let mut p: Vec<(f64, f64)> = Vec::new();
                        for q in pts {
                            if p.last() != Some(&q) {
                                p.push(q);
                            }
                        }
                        Polyline::new(format!("l{i}"), p).ok()
                    })
                    .collect()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn rasterize_equals_brute_force(lines in arb_lines(), r in 0.0f64..6.0,
                                            w in 1usize..64, h in 1usize..64) {
                prop_assert_eq!(buffer_rasterize(&lines, r, (w, h)).unwrap(),
                                oracle_mask(&lines, r, w, h));
            }

            #[test]
            fn radius_monotone(lines in arb_lines(), r1 in 0.0f64..6.0, dr in 0.0f64..6.0) {
                let a = buffer_rasterize(&lines, r1, (64, 64)).unwrap();
                let b = buffer_rasterize(&lines, r1 + dr, (64, 64)).unwrap();
                prop_assert!(a.is_subset_of(&b));
            }

            #[test]
            fn tiles_cover_poi(pts in prop::collection::vec((0.0f64..300.0, 0.0f64..200.0), 2..5)) {
                let mut p: Vec<(f64, f64)> = Vec::new();
                for q in pts { if p.last() != Some(&q) { p.push(q); } }
                prop_assume!(p.len() >= 2);
                let lines = vec![Polyline::new("x", p).unwrap()];
                let dims = (300, 200);
                let tiles = tile_windows(&lines, dims, &TileParams::default()).unwrap();
                let poi = make_poi(&lines, POI_RADIUS, dims).unwrap();
                for y in 0..dims.1 {
                    for x in 0..dims.0 {
                        if poi.get(x, y) {
                            prop_assert!(tiles.iter().any(|t| t.contains(x, y)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn thin_raster_is_connected_and_one_pixel_wide() {
        let l = Polyline::new("a", vec![(2.0, 3.0), (17.0, 11.0)]).unwrap();
        let m = rasterize_lines(std::slice::from_ref(&l), (20, 15)).unwrap();
        assert_eq!(m.count(), 16);
        assert_eq!(crate::vectorize::components(&m).len(), 1);
        assert!(m.get(2, 3) && m.get(17, 11));
    }
}
