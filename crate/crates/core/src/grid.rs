//! Raster containers and the Heaviside / region-mean primitives shared by
//! both segmentation algorithms.
//!
//! Coordinates are pixel indices, origin top-left, `x` to the right and `y`
//! down. All storage is row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2-D grid of finite `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyGrid);
        }
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Grid filled with a single value.
    ///
    /// Panics if either dimension is zero or `value` is not finite.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite sample at ({x}, {y})");
                values.push(v);
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.values[y * self.width + x] = v;
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One to three channels of equal size with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    channels: Vec<ScalarGrid>,
}

impl RasterImage {
    pub fn new(channels: Vec<ScalarGrid>) -> Result<Self> {
        if channels.is_empty() || channels.len() > 3 {
            return Err(Error::ChannelCount(channels.len()));
        }
        let dims = channels[0].dims();
        if channels.iter().any(|c| c.dims() != dims) {
            return Err(Error::DimensionMismatch);
        }
        for c in &channels {
            if c.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::OutOfRange);
            }
        }
        Ok(Self { channels })
    }

    pub fn gray(grid: ScalarGrid) -> Result<Self> {
        Self::new(vec![grid])
    }

    pub fn channels(&self) -> &[ScalarGrid] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    /// Sample vector of pixel `i` (row-major index).
    pub fn pixel(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().map(move |c| c.values[i])
    }

    /// Add `offset` to every sample without the `[0, 1]` range check.
    ///
    /// Only meaningful for tests of shift invariance; the result is not a
    /// valid image if any sample leaves the unit range.
    #[doc(hidden)]
    pub fn shifted_unchecked(&self, offset: f64) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.map(|v| v + offset)).collect(),
        }
    }

    /// Crop a window; the window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width() && y0 + h <= self.height());
        let channels = self
            .channels
            .iter()
            .map(|c| ScalarGrid::from_fn(w, h, |x, y| c.get(x0 + x, y0 + y)))
            .collect();
        Self { channels }
    }
}

/// Binary raster, one `bool` per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyGrid);
        }
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Bounds-checked lookup; out-of-range coordinates read as `false`.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// `true` iff every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Copy `self` into a larger canvas at offset `(x0, y0)` with logical OR.
    pub fn or_into(&self, canvas: &mut BinaryMask, x0: usize, y0: usize) {
        assert!(x0 + self.width <= canvas.width && y0 + self.height <= canvas.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    canvas.set(x0 + x, y0 + y, true);
                }
            }
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Centroid of the set pixels, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Level set that is `+1` on set pixels and `-1` elsewhere.
    pub fn to_level_set(&self) -> LevelSet {
        LevelSet::from_mask(self)
    }
}

/// Signed scalar field whose non-negative region encodes a binary area.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    grid: ScalarGrid,
    empty: bool,
}

impl LevelSet {
    pub fn new(grid: ScalarGrid) -> Self {
        let empty = !grid.values.iter().any(|&v| v > 0.0);
        Self { grid, empty }
    }

    /// `+1` where the mask is set, `-1` elsewhere.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let values = mask
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { -1.0 })
            .collect();
        Self::new(ScalarGrid {
            width: mask.width,
            height: mask.height,
            values,
        })
    }

    /// `±1` checkerboard with the given period in pixels.
    pub fn checkerboard(width: usize, height: usize, period: usize) -> Self {
        let half = (period / 2).max(1);
        Self::new(ScalarGrid::from_fn(width, height, |x, y| {
            if (x / half + y / half).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        }))
    }

    pub fn grid(&self) -> &ScalarGrid {
        &self.grid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// No sample is strictly positive.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn values(&self) -> &[f64] {
        &self.grid.values
    }

    pub fn negate(&self) -> Self {
        Self::new(self.grid.map(|v| -v))
    }
}

/// `H(φ)`: bit is set iff the sample is `>= 0` (so `H(0) = 1`).
pub fn heaviside(ls: &LevelSet) -> BinaryMask {
    BinaryMask {
        width: ls.grid.width,
        height: ls.grid.height,
        bits: ls.grid.values.iter().map(|&v| v >= 0.0).collect(),
    }
}

/// Mean colours inside (`c1`) and outside (`c2`) a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeans {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// One of the two regions was empty and its mean was replaced by the
    /// global image mean.
    pub degenerate: bool,
}

impl RegionMeans {
    /// Largest per-channel gap between the two means.
    pub fn contrast(&self) -> f64 {
        self.c1
            .iter()
            .zip(&self.c2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn region_means(img: &RasterImage, mask: &BinaryMask) -> Result<RegionMeans> {
    if img.dims() != mask.dims() {
        return Err(Error::DimensionMismatch);
    }
    let n_in = mask.count();
    let n = mask.bits.len();
    let n_out = n - n_in;
    let mut c1 = Vec::with_capacity(img.channel_count());
    let mut c2 = Vec::with_capacity(img.channel_count());
    for ch in &img.channels {
        let (mut s_in, mut s_out) = (0.0, 0.0);
        for (&v, &b) in ch.values.iter().zip(&mask.bits) {
            if b {
                s_in += v;
            } else {
                s_out += v;
            }
        }
        let global = (s_in + s_out) / n as f64;
        c1.push(if n_in > 0 { s_in / n_in as f64 } else { global });
        c2.push(if n_out > 0 { s_out / n_out as f64 } else { global });
    }
    Ok(RegionMeans {
        c1,
        c2,
        degenerate: n_in == 0 || n_out == 0,
    })
}

/// How colour images feed the segmentation energies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Collapse to a single Rec.601 luminance channel first.
    Luminance,
    /// Sum squared distances over all channels.
    #[default]
    Multichannel,
}

/// Rec.601 luminance for RGB, passthrough for one channel.
///
/// Two-channel images are averaged.
pub fn to_intensity(img: &RasterImage) -> ScalarGrid {
    match img.channels.as_slice() {
        [g] => g.clone(),
        [r, g, b] => {
            let values = r
                .values
                .iter()
                .zip(&g.values)
                .zip(&b.values)
                .map(|((&r, &g), &b)| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
                .collect();
            ScalarGrid {
                width: r.width,
                height: r.height,
                values,
            }
        }
        chans => {
            let k = chans.len() as f64;
            let w = chans[0].width;
            let h = chans[0].height;
            ScalarGrid::from_fn(w, h, |x, y| chans.iter().map(|c| c.get(x, y)).sum::<f64>() / k)
        }
    }
}

/// The image the energies are evaluated on for a given colour mode.
pub fn working_image(img: &RasterImage, mode: ColorMode) -> RasterImage {
    match mode {
        ColorMode::Multichannel => img.clone(),
        ColorMode::Luminance if img.channel_count() == 1 => img.clone(),
        ColorMode::Luminance => RasterImage {
            channels: vec![to_intensity(img)],
        },
    }
}

/// `Σ_ch (u_ch - c_ch)²` for pixel `i`.
pub(crate) fn sq_dist(img: &RasterImage, i: usize, c: &[f64]) -> f64 {
    img.channels
        .iter()
        .zip(c)
        .map(|(ch, &m)| {
            let d = ch.values[i] - m;
            d * d
        })
        .sum()
}
