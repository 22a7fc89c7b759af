//! Label correction: Chan–Vese with a pixels-of-interest field and an
//! affine-registered shape prior.
//!
//! Three level sets are optimised jointly:
//!
//! * `phi`: foreground/background split of the image,
//! * `poi`: pixels-of-interest (`L`), only ever a subset of its initial support,
//! * `psi`: the prior shape after an affine warp, thresholded against the
//!   desired foreground `H(phi) * H(L)`.
//!
//! Energy:
//!
//! ```text
//! E = Σ (u-c1)² H(φ) + (u-c2)² (1-H(φ))  +  λ Σ (H(φ)H(L) - H(ψ))²
//! ```
//!
//! Each iteration is a block-coordinate descent step (means, `phi`, `L`,
//! `psi`), so the recorded energy never increases. The warp parameters move
//! by gradient descent on a smoothed copy of the shape term and a step is
//! only kept if the discrete energy does not go up.

use serde::{Deserialize, Serialize};

use crate::chanvese::{cv_energy, is_constant, record, EnergyTrace};
use crate::error::{Error, Result};
use crate::grid::{heaviside, region_means, sq_dist, working_image, BinaryMask, ColorMode};
use crate::grid::{LevelSet, RasterImage, ScalarGrid};

/// Smallest scale the optimiser may reach, whatever the configured bounds.
pub const MIN_SCALE: f64 = 0.05;

/// Translation, scale, rotation and shear of the prior shape.
///
/// The warp maps output pixel `(x, y)` to prior coordinates
///
/// ```text
/// x* = x - a,  y* = y - b
/// X  = a + ((x*-tx)(cos θ + shy sin θ) + (y*-ty)(sin θ + shx cos θ)) / s
/// Y  = b + ((x*-tx)(-sin θ + shy cos θ) + (y*-ty)(cos θ - shx sin θ)) / s
/// ```
///
/// about the centre `(a, b)`, and the warped field is `s * psi0(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub tr_x: f64,
    pub tr_y: f64,
    pub scale: f64,
    pub theta: f64,
    pub shear_x: f64,
    pub shear_y: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: Self = Self {
        tr_x: 0.0,
        tr_y: 0.0,
        scale: 1.0,
        theta: 0.0,
        shear_x: 0.0,
        shear_y: 0.0,
    };

    pub fn to_array(self) -> [f64; 6] {
        [
            self.tr_x,
            self.tr_y,
            self.scale,
            self.theta,
            self.shear_x,
            self.shear_y,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            tr_x: a[0],
            tr_y: a[1],
            scale: a[2],
            theta: a[3],
            shear_x: a[4],
            shear_y: a[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("affine parameters must be finite".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidParam("affine scale must be > 0".into()));
        }
        Ok(())
    }

    /// Map an output pixel to prior coordinates.
    pub fn inverse_map(&self, x: f64, y: f64, center: (f64, f64)) -> (f64, f64) {
        let m = WarpCoeffs::new(self);
        m.map(x, y, center)
    }
}

/// Per-parameter gradient-descent step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineSteps {
    pub translation: f64,
    pub scale: f64,
    pub theta: f64,
    pub shear: f64,
}

impl Default for AffineSteps {
    fn default() -> Self {
        Self {
            translation: 0.5,
            scale: 0.005,
            theta: 0.01,
            shear: 0.005,
        }
    }
}

impl AffineSteps {
    fn as_array(&self) -> [f64; 6] {
        [
            self.translation,
            self.translation,
            self.scale,
            self.theta,
            self.shear,
            self.shear,
        ]
    }
}

/// Weight of the shape term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Fixed(f64),
    /// Mean magnitude of the per-pixel colour term at iteration 0, so the
    /// two terms start at the same scale.
    #[default]
    Auto,
}

impl std::str::FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParam(format!("lambda must be a number or 'auto', got {s:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParam(format!("lambda must be >= 0, got {v}")));
        }
        Ok(Lambda::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcaOptions {
    pub lambda: Lambda,
    pub max_iters: usize,
    pub energy_tol: f64,
    pub affine_steps: AffineSteps,
    /// Minimum fraction of the registered shape covered by foreground for
    /// the annotation to be kept.
    pub reject_overlap_min: f64,
    /// Minimum per-channel gap between the final region means; below it the
    /// window is treated as having no foreground.
    pub min_contrast: f64,
    pub shape_blur_sigma: f64,
    pub scale_bounds: (f64, f64),
    pub max_rotation: f64,
    pub max_shear: f64,
    pub color_mode: ColorMode,
    /// Which phase counts as the object.
    pub polarity: Polarity,
}

/// Brightness of the object relative to its surroundings. With `Dark` or
/// `Light`, a run that ends with the other phase as foreground is repeated
/// once from the flipped segmentation, and rejected if it flips back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Any,
    Dark,
    Light,
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(Polarity::Any),
            "dark" => Ok(Polarity::Dark),
            "light" => Ok(Polarity::Light),
            _ => Err(Error::InvalidParam(format!("polarity must be any, dark or light, got {s:?}"))),
        }
    }
}

impl Default for LcaOptions {
    fn default() -> Self {
        Self {
            lambda: Lambda::Auto,
            max_iters: 300,
            energy_tol: 0.0,
            affine_steps: AffineSteps::default(),
            reject_overlap_min: 0.2,
            min_contrast: 0.1,
            shape_blur_sigma: 1.5,
            scale_bounds: (0.8, 1.25),
            max_rotation: 0.35,
            max_shear: 0.2,
            color_mode: ColorMode::Multichannel,
            polarity: Polarity::Any,
        }
    }
}

impl LcaOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if let Lambda::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return bad("lambda must be >= 0");
            }
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1");
        }
        if !(self.energy_tol >= 0.0) {
            return bad("energy_tol must be >= 0");
        }
        if self.affine_steps.as_array().iter().any(|s| !(*s > 0.0)) {
            return bad("affine step sizes must be > 0");
        }
        if !(0.0..=1.0).contains(&self.reject_overlap_min) {
            return bad("reject_overlap_min must be in [0, 1]");
        }
        if !(self.min_contrast >= 0.0) {
            return bad("min_contrast must be >= 0");
        }
        if !(self.shape_blur_sigma >= 0.0) {
            return bad("shape_blur_sigma must be >= 0");
        }
        let (lo, hi) = self.scale_bounds;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return bad("scale_bounds must satisfy 0 < lo <= 1 <= hi");
        }
        if !(self.max_rotation >= 0.0) || !(self.max_shear >= 0.0) {
            return bad("rotation and shear bounds must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    RejectedFalse,
}

#[derive(Debug, Clone)]
pub struct CorrectionResult {
    /// `H(phi) * H(L)`; empty when the annotation is rejected.
    pub corrected_mask: BinaryMask,
    /// `H(phi) * H(L)` before the verdict is applied.
    pub foreground: BinaryMask,
    /// Support of the prior warped by `final_affine`.
    pub registered_shape: BinaryMask,
    pub final_affine: AffineParams,
    pub trace: EnergyTrace,
    pub verdict: Verdict,
    pub lambda: f64,
    pub iterations: usize,
    /// `|foreground ∩ registered_shape| / |registered_shape|`.
    pub coverage: f64,
    pub scale_clamped: bool,
    /// `H(L_t) ⊆ H(L_0)` and `H(psi_t) ⊆ warp support` held at every iteration.
    pub shrink_invariants_held: bool,
    pub degenerate: bool,
}

/// Smoothed prior shape ready for warping and differentiation.
#[derive(Debug, Clone)]
pub struct ShapePrior {
    field: ScalarGrid,
    center: (f64, f64),
}

impl ShapePrior {
    /// Blur the binary prior with a Gaussian of `sigma` pixels and shift it
    /// to `[-0.5, 0.5]`. The warp centre is the prior's centroid (or the
    /// window centre for an empty prior).
    pub fn from_mask(prior: &BinaryMask, sigma: f64) -> Self {
        let (w, h) = prior.dims();
        let raw = ScalarGrid::from_fn(w, h, |x, y| if prior.get(x, y) { 1.0 } else { 0.0 });
        let blurred = gaussian_blur(&raw, sigma);
        let center = prior
            .centroid()
            .unwrap_or(((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0));
        Self {
            field: blurred.map(|v| v - 0.5),
            center,
        }
    }

    pub fn from_field(field: ScalarGrid, center: (f64, f64)) -> Self {
        Self { field, center }
    }

    pub fn field(&self) -> &ScalarGrid {
        &self.field
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }

    /// Warp without thresholding.
    pub fn warp(&self, p: &AffineParams) -> LevelSet {
        warp_shape(&self.field, p, self.center)
    }
}

/// Value read for prior samples outside the grid.
const OUTSIDE: f64 = -1.0;

/// Catmull–Rom weights and their derivatives for fractional offset `f`.
fn cubic_weights(f: f64) -> ([f64; 4], [f64; 4]) {
    let f2 = f * f;
    let f3 = f2 * f;
    (
        [
            0.5 * (-f3 + 2.0 * f2 - f),
            0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
            0.5 * (-3.0 * f3 + 4.0 * f2 + f),
            0.5 * (f3 - f2),
        ],
        [
            0.5 * (-3.0 * f2 + 4.0 * f - 1.0),
            0.5 * (9.0 * f2 - 10.0 * f),
            0.5 * (-9.0 * f2 + 8.0 * f + 1.0),
            0.5 * (3.0 * f2 - 2.0 * f),
        ],
    )
}

/// Bicubic sample of `g` at `(x, y)` with its spatial gradient.
fn sample_cubic(g: &ScalarGrid, x: f64, y: f64) -> (f64, f64, f64) {
    let (w, h) = (g.width() as i64, g.height() as i64);
    if x < -2.0 || y < -2.0 || x > w as f64 + 1.0 || y > h as f64 + 1.0 {
        return (OUTSIDE, 0.0, 0.0);
    }
    let (xf, yf) = (x.floor(), y.floor());
    let (ix, iy) = (xf as i64, yf as i64);
    let (wx, dwx) = cubic_weights(x - xf);
    let (wy, dwy) = cubic_weights(y - yf);
    let vals = g.values();
    let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for (j, (&wyj, &dwyj)) in wy.iter().zip(&dwy).enumerate() {
        let yy = iy - 1 + j as i64;
        let (mut row, mut drow) = (0.0, 0.0);
        for (i, (&wxi, &dwxi)) in wx.iter().zip(&dwx).enumerate() {
            let xx = ix - 1 + i as i64;
            let s = if xx < 0 || yy < 0 || xx >= w || yy >= h {
                OUTSIDE
            } else {
                vals[(yy * w + xx) as usize]
            };
            row += wxi * s;
            drow += dwxi * s;
        }
        v += wyj * row;
        gx += wyj * drow;
        gy += dwyj * row;
    }
    (v, gx, gy)
}

#[derive(Debug, Clone, Copy)]
struct WarpCoeffs {
    p: AffineParams,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    sin: f64,
    cos: f64,
}

impl WarpCoeffs {
    fn new(p: &AffineParams) -> Self {
        let (sin, cos) = p.theta.sin_cos();
        Self {
            p: *p,
            a: cos + p.shear_y * sin,
            b: sin + p.shear_x * cos,
            c: -sin + p.shear_y * cos,
            d: cos - p.shear_x * sin,
            sin,
            cos,
        }
    }

    fn map(&self, x: f64, y: f64, center: (f64, f64)) -> (f64, f64) {
        let dx = x - center.0 - self.p.tr_x;
        let dy = y - center.1 - self.p.tr_y;
        let s = self.p.scale;
        (
            center.0 + (dx * self.a + dy * self.b) / s,
            center.1 + (dx * self.c + dy * self.d) / s,
        )
    }
}

/// `psi(x, y) = s * psi0(X, Y)` with bicubic sampling; samples falling
/// outside `psi0` read as `-1`.
pub fn warp_shape(psi0: &ScalarGrid, p: &AffineParams, center: (f64, f64)) -> LevelSet {
    let m = WarpCoeffs::new(p);
    let (w, h) = psi0.dims();
    LevelSet::new(ScalarGrid::from_fn(w, h, |x, y| {
        let (sx, sy) = m.map(x as f64, y as f64, center);
        p.scale * sample_cubic(psi0, sx, sy).0
    }))
}

/// Half-width of the smooth Heaviside used for the warp gradients.
pub const SMOOTH_WIDTH: f64 = 0.5;

/// C² quintic step from 0 at `-SMOOTH_WIDTH` to 1 at `+SMOOTH_WIDTH`, and
/// its derivative.
pub fn smooth_heaviside(z: f64) -> (f64, f64) {
    if z <= -SMOOTH_WIDTH {
        return (0.0, 0.0);
    }
    if z >= SMOOTH_WIDTH {
        return (1.0, 0.0);
    }
    let t = (z + SMOOTH_WIDTH) / (2.0 * SMOOTH_WIDTH);
    let t2 = t * t;
    let v = t2 * t * (10.0 - 15.0 * t + 6.0 * t2);
    let dv = 30.0 * t2 * (1.0 - t) * (1.0 - t) / (2.0 * SMOOTH_WIDTH);
    (v, dv)
}

/// Gradient of `λ Σ (T - H̃(psi(p)))²` with respect to
/// `(tr_x, tr_y, scale, theta, shear_x, shear_y)`, where `T = H(φ)H(L)` and
/// `H̃` is [`smooth_heaviside`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGradient {
    pub grad: [f64; 6],
    /// Pixels contributing a non-zero term.
    pub active_pixels: usize,
}

pub fn affine_gradients(
    target: &BinaryMask,
    shape: &ShapePrior,
    p: &AffineParams,
    lambda: f64,
) -> Result<AffineGradient> {
    if target.dims() != shape.dims() {
        return Err(Error::DimensionMismatch);
    }
    p.validate()?;
    let m = WarpCoeffs::new(p);
    let center = shape.center;
    let s = p.scale;
    let (w, h) = target.dims();
    let mut grad = [0.0; 6];
    let mut active = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = m.map(x as f64, y as f64, center);
            let (v0, gx, gy) = sample_cubic(&shape.field, sx, sy);
            let psi = s * v0;
            let (hv, dh) = smooth_heaviside(psi);
            if dh == 0.0 {
                continue;
            }
            let t = if target.get(x, y) { 1.0 } else { 0.0 };
            let r = t - hv;
            if r == 0.0 {
                continue;
            }
            active += 1;
            let k = -2.0 * lambda * r * dh;
            let dx = x as f64 - center.0 - p.tr_x;
            let dy = y as f64 - center.1 - p.tr_y;
            let (rx, ry) = (sx - center.0, sy - center.1);
            // d psi / d param = s * (gx dX + gy dY) (+ psi0 for the scale)
            let d_tx = -(gx * m.a + gy * m.c);
            let d_ty = -(gx * m.b + gy * m.d);
            let d_s = v0 - (gx * rx + gy * ry);
            let d_th = s * (gx * ry - gy * rx);
            let d_shx = dy * (gx * m.cos - gy * m.sin);
            let d_shy = dx * (gx * m.sin + gy * m.cos);
            for (g, d) in grad.iter_mut().zip([d_tx, d_ty, d_s, d_th, d_shx, d_shy]) {
                *g += k * d;
            }
        }
    }
    Ok(AffineGradient {
        grad,
        active_pixels: active,
    })
}

/// Smoothed shape energy `λ Σ (T - H̃(psi(p)))²`, the function whose
/// derivative [`affine_gradients`] returns.
pub fn smoothed_shape_energy(
    target: &BinaryMask,
    shape: &ShapePrior,
    p: &AffineParams,
    lambda: f64,
) -> f64 {
    let warped = shape.warp(p);
    warped
        .values()
        .iter()
        .zip(target.bits())
        .map(|(&v, &t)| {
            let r = if t { 1.0 } else { 0.0 } - smooth_heaviside(v).0;
            r * r
        })
        .sum::<f64>()
        * lambda
}

/// Energy `cv + λ Σ (H(φ)H(L) - H(ψ))²`.
#[allow(clippy::too_many_arguments)]
pub fn lca_energy(
    img: &RasterImage,
    phi: &LevelSet,
    poi: &LevelSet,
    psi: &LevelSet,
    c1: &[f64],
    c2: &[f64],
    lambda: f64,
) -> Result<f64> {
    check_dims(phi, poi, psi)?;
    let color = cv_energy(img, phi, c1, c2)?;
    let shape: f64 = phi
        .values()
        .iter()
        .zip(poi.values())
        .zip(psi.values())
        .map(|((&f, &l), &s)| {
            let d = (f >= 0.0 && l >= 0.0) as i32 - (s >= 0.0) as i32;
            (d * d) as f64
        })
        .sum();
    Ok(color + lambda * shape)
}

/// Foreground update that minimises the energy pixel by pixel for fixed
/// means, `L` and `psi`:
///
/// `phi = +1` iff `(u-c1)² - (u-c2)² + λ H(L) (1 - 2 H(ψ)) <= 0`.
///
/// The shape term is the exact change of `λ (H(φ)H(L) - H(ψ))²` when
/// `H(φ)` flips from 0 to 1, so the update can only lower the energy.
#[allow(clippy::too_many_arguments)]
pub fn update_phi(
    img: &RasterImage,
    phi: &LevelSet,
    poi: &LevelSet,
    psi: &LevelSet,
    c1: &[f64],
    c2: &[f64],
    lambda: f64,
) -> Result<LevelSet> {
    check_dims(phi, poi, psi)?;
    if img.dims() != phi.dims() {
        return Err(Error::DimensionMismatch);
    }
    let (w, h) = phi.dims();
    let values = (0..w * h)
        .map(|i| {
            let hl = (poi.values()[i] >= 0.0) as i32 as f64;
            let hpsi = (psi.values()[i] >= 0.0) as i32 as f64;
            let shape = lambda * hl * (1.0 - 2.0 * hpsi);
            if sq_dist(img, i, c1) + shape <= sq_dist(img, i, c2) {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(LevelSet::new(ScalarGrid::new(w, h, values)?))
}

/// Pixels-of-interest update. Only pixels inside the initial support
/// (`initial > 0`) may be positive; there `L = +1` iff
/// `H(φ) (H(φ)H(L) - H(ψ)) >= 0`.
pub fn update_poi(
    phi: &LevelSet,
    poi: &LevelSet,
    psi: &LevelSet,
    initial: &LevelSet,
) -> Result<LevelSet> {
    check_dims(phi, poi, psi)?;
    if initial.dims() != phi.dims() {
        return Err(Error::DimensionMismatch);
    }
    let (w, h) = phi.dims();
    let values = (0..w * h)
        .map(|i| {
            if initial.values()[i] <= 0.0 {
                return -1.0;
            }
            let hf = (phi.values()[i] >= 0.0) as i32;
            let hl = (poi.values()[i] >= 0.0) as i32;
            let hs = (psi.values()[i] >= 0.0) as i32;
            if hf * (hf * hl - hs) >= 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(LevelSet::new(ScalarGrid::new(w, h, values)?))
}

#[derive(Debug, Clone)]
pub struct ShapeUpdate {
    pub psi: LevelSet,
    pub params: AffineParams,
    /// Support of the prior warped by `params`.
    pub support: BinaryMask,
    /// The step hit the scale floor or a configured bound.
    pub clamped: bool,
    /// Largest parameter change in units of its step size.
    pub movement: f64,
}

/// Move the warp parameters one gradient step (halving it while the
/// energy would rise), warp the prior, then keep only the
/// warped-support pixels that are desired foreground.
pub fn update_shape(
    phi: &LevelSet,
    poi: &LevelSet,
    shape: &ShapePrior,
    p: &AffineParams,
    lambda: f64,
    opts: &LcaOptions,
) -> Result<ShapeUpdate> {
    if phi.dims() != poi.dims() || phi.dims() != shape.dims() {
        return Err(Error::DimensionMismatch);
    }
    let target = heaviside(phi).and(&heaviside(poi));
    let current_support = heaviside(&shape.warp(p));
    let mut best = (*p, current_support, false);
    let mut movement = 0.0;

    let g = affine_gradients(&target, shape, p, lambda)?;
    let steps = opts.affine_steps.as_array();
    let q: Vec<f64> = (0..6).map(|k| g.grad[k] * steps[k]).collect();
    let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if lambda > 0.0 && g.active_pixels > 0 && qmax > 0.0 {
        // The largest step-scaled component moves exactly one step; the
        // step is halved until both the smoothed energy drops and the
        // discrete overlap with the target holds.
        let base = p.to_array();
        let keep_overlap = overlap(&target, &best.1);
        let e0 = smoothed_shape_energy(&target, shape, p, lambda);
        let mut factor = 1.0;
        for _ in 0..6 {
            let mut next = [0.0; 6];
            for k in 0..6 {
                next[k] = base[k] - factor * steps[k] * q[k] / qmax;
            }
            let (cand, clamped) = clamp_params(AffineParams::from_array(next), opts);
            let support = heaviside(&shape.warp(&cand));
            if overlap(&target, &support) >= keep_overlap
                && smoothed_shape_energy(&target, shape, &cand, lambda) < e0
            {
                movement = (0..6)
                    .map(|k| ((cand.to_array()[k] - base[k]) / steps[k]).abs())
                    .fold(0.0, f64::max);
                best = (cand, support, clamped);
                break;
            }
            factor *= 0.5;
        }
    }

    let (params, support, clamped) = best;
    let (w, h) = phi.dims();
    let values = target
        .bits()
        .iter()
        .zip(support.bits())
        .map(|(&t, &s)| if s && t { 1.0 } else { -1.0 })
        .collect();
    Ok(ShapeUpdate {
        psi: LevelSet::new(ScalarGrid::new(w, h, values)?),
        params,
        support,
        clamped,
        movement,
    })
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> usize {
    a.bits().iter().zip(b.bits()).filter(|(&x, &y)| x && y).count()
}

fn clamp_params(mut p: AffineParams, opts: &LcaOptions) -> (AffineParams, bool) {
    let orig = p;
    let (lo, hi) = opts.scale_bounds;
    p.scale = p.scale.clamp(lo.max(MIN_SCALE), hi.max(MIN_SCALE));
    p.theta = p.theta.clamp(-opts.max_rotation, opts.max_rotation);
    p.shear_x = p.shear_x.clamp(-opts.max_shear, opts.max_shear);
    p.shear_y = p.shear_y.clamp(-opts.max_shear, opts.max_shear);
    (p, p != orig)
}

/// Iterations without an energy decrease after which a still-moving
/// registration is abandoned.
pub const PATIENCE: usize = 20;

/// Correct one annotation: `prior_shape` is the buffered annotation and
/// `poi` the wide candidate region. `phi` starts as `+1` on the PoI.
pub fn lca_run(
    img: &RasterImage,
    prior_shape: &BinaryMask,
    poi: &BinaryMask,
    opts: &LcaOptions,
) -> Result<CorrectionResult> {
    lca_run_with_init(img, prior_shape, poi, &LevelSet::from_mask(poi), opts)
}

/// [`lca_run`] with an explicit initial `phi`.
pub fn lca_run_with_init(
    img: &RasterImage,
    prior_shape: &BinaryMask,
    poi: &BinaryMask,
    phi_init: &LevelSet,
    opts: &LcaOptions,
) -> Result<CorrectionResult> {
    opts.validate()?;
    let (first, phi, fg_darker) = run_pass(img, prior_shape, poi, phi_init, opts, None)?;
    let wrong = |darker: Option<bool>| {
        matches!(
            (opts.polarity, darker),
            (Polarity::Dark, Some(false)) | (Polarity::Light, Some(true))
        )
    };
    if !wrong(fg_darker) {
        return Ok(first);
    }
    // Keep the first pass's weight: re-deriving it from a flipped start
    // would measure a different problem.
    let (mut second, _, darker) = run_pass(img, prior_shape, poi, &phi.negate(), opts, Some(first.lambda))?;
    second.iterations += first.iterations;
    second.shrink_invariants_held &= first.shrink_invariants_held;
    if wrong(darker) {
        second.verdict = Verdict::RejectedFalse;
        let (w, h) = img.dims();
        second.corrected_mask = BinaryMask::empty(w, h);
    }
    Ok(second)
}

/// One optimisation from `phi_init`. Also returns the final `phi` and
/// whether the foreground mean is darker than the background mean (`None`
/// when they are equal or the run stopped early).
fn run_pass(
    img: &RasterImage,
    prior_shape: &BinaryMask,
    poi: &BinaryMask,
    phi_init: &LevelSet,
    opts: &LcaOptions,
    lambda: Option<f64>,
) -> Result<(CorrectionResult, LevelSet, Option<bool>)> {
    let dims = img.dims();
    if prior_shape.dims() != dims || poi.dims() != dims || phi_init.dims() != dims {
        return Err(Error::DimensionMismatch);
    }
    let (w, h) = dims;
    let work = working_image(img, opts.color_mode);
    let shape = ShapePrior::from_mask(prior_shape, opts.shape_blur_sigma);
    let mut params = AffineParams::IDENTITY;
    let mut support = heaviside(&shape.warp(&params));

    let rejected_empty = |trace: EnergyTrace, lambda: f64, degenerate: bool| CorrectionResult {
        corrected_mask: BinaryMask::empty(w, h),
        foreground: BinaryMask::empty(w, h),
        registered_shape: heaviside(&shape.warp(&AffineParams::IDENTITY)),
        final_affine: AffineParams::IDENTITY,
        trace,
        verdict: Verdict::RejectedFalse,
        lambda,
        iterations: 0,
        coverage: 0.0,
        scale_clamped: false,
        shrink_invariants_held: true,
        degenerate,
    };

    if poi.is_all_false() {
        return Ok((rejected_empty(Vec::new(), 0.0, false), phi_init.clone(), None));
    }

    let poi0 = LevelSet::from_mask(poi);
    let mut poi_ls = poi0.clone();
    let mut psi = LevelSet::from_mask(&support);
    let mut phi = LevelSet::from_mask(&heaviside(phi_init));
    let mut means = region_means(&work, &heaviside(&phi))?;

    let lambda = match (lambda, opts.lambda) {
        (Some(l), _) | (None, Lambda::Fixed(l)) => l,
        (None, Lambda::Auto) => auto_lambda(&work, &means.c1, &means.c2),
    };

    let mut energy = lca_energy(&work, &phi, &poi_ls, &psi, &means.c1, &means.c2, lambda)?;
    let mut trace = vec![record(energy, &means, &phi)];

    if is_constant(&work) {
        return Ok((rejected_empty(trace, lambda, true), phi, None));
    }

    let mut iterations = 0;
    let mut clamped_any = false;
    let mut invariants = true;
    let mut stalled = 0;
    let poi_mask0 = heaviside(&poi0);
    for _ in 0..opts.max_iters {
        iterations += 1;
        phi = update_phi(&work, &phi, &poi_ls, &psi, &means.c1, &means.c2, lambda)?;
        poi_ls = update_poi(&phi, &poi_ls, &psi, &poi0)?;
        let upd = update_shape(&phi, &poi_ls, &shape, &params, lambda, opts)?;
        psi = upd.psi;
        params = upd.params;
        support = upd.support;
        clamped_any |= upd.clamped;

        let held = heaviside(&poi_ls).is_subset_of(&poi_mask0)
            && heaviside(&psi).is_subset_of(&support);
        debug_assert!(held, "shrink invariant violated");
        invariants &= held;

        means = region_means(&work, &heaviside(&phi))?;
        let next = lca_energy(&work, &phi, &poi_ls, &psi, &means.c1, &means.c2, lambda)?;
        trace.push(record(next, &means, &phi));
        if next < energy {
            stalled = 0;
        } else {
            stalled += 1;
        }
        let settled = energy - next <= opts.energy_tol && (upd.movement < 1e-3 || stalled >= PATIENCE);
        energy = next;
        if settled {
            break;
        }
    }

    let foreground = heaviside(&phi).and(&heaviside(&poi_ls));
    let shape_area = support.count();
    let coverage = if shape_area > 0 {
        overlap(&foreground, &support) as f64 / shape_area as f64
    } else {
        0.0
    };
    let rejected = foreground.is_all_false()
        || means.degenerate
        || means.contrast() < opts.min_contrast
        || coverage < opts.reject_overlap_min;
    let verdict = if rejected {
        Verdict::RejectedFalse
    } else {
        Verdict::Accepted
    };
    let (b1, b2): (f64, f64) = (means.c1.iter().sum(), means.c2.iter().sum());
    let darker = (b1 != b2 && !means.degenerate).then_some(b1 < b2);
    let result = CorrectionResult {
        corrected_mask: if rejected {
            BinaryMask::empty(w, h)
        } else {
            foreground.clone()
        },
        foreground,
        registered_shape: support,
        final_affine: params,
        trace,
        verdict,
        lambda,
        iterations,
        coverage,
        scale_clamped: clamped_any,
        shrink_invariants_held: invariants,
        degenerate: means.degenerate,
    };
    Ok((result, phi, darker))
}

/// Mean of `|(u-c1)² - (u-c2)²|` over the image.
pub fn auto_lambda(img: &RasterImage, c1: &[f64], c2: &[f64]) -> f64 {
    let (w, h) = img.dims();
    let n = w * h;
    (0..n)
        .map(|i| (sq_dist(img, i, c1) - sq_dist(img, i, c2)).abs())
        .sum::<f64>()
        / n as f64
}

fn check_dims(a: &LevelSet, b: &LevelSet, c: &LevelSet) -> Result<()> {
    if a.dims() != b.dims() || a.dims() != c.dims() {
        return Err(Error::DimensionMismatch);
    }
    Ok(())
}

/// Separable Gaussian blur with zero padding; `sigma == 0` copies.
pub fn gaussian_blur(g: &ScalarGrid, sigma: f64) -> ScalarGrid {
    if sigma <= 0.0 {
        return g.clone();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = g.dims();
    let pass = |src: &ScalarGrid, horizontal: bool| {
        ScalarGrid::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let o = k as i64 - radius;
                let (sx, sy) = if horizontal {
                    (x as i64 + o, y as i64)
                } else {
                    (x as i64, y as i64 + o)
                };
                if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                    acc += kv * src.get(sx as usize, sy as usize);
                }
            }
            acc
        })
    };
    pass(&pass(g, true), false)
}
