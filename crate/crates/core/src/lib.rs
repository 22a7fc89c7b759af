//! Label correction for linear map features.
//!
//! Vector annotations (roads, rails, waterlines) rarely line up with the
//! scanned map they describe. This crate turns such annotations into pixel
//! masks, corrects them with a shape-prior Chan–Vese segmentation, converts
//! masks back to line graphs and scores the result.
//!
//! * [`grid`] - rasters, masks, level sets, region means
//! * [`chanvese`] - two-phase Chan–Vese baseline
//! * [`lca`] - the label correction loop with affine shape registration
//! * [`annot`] - buffering, pixels-of-interest and tiling
//! * [`vectorize`] - thinning and graph extraction
//! * [`metrics`] - pixel scores, correctness/completeness, APLS
//! * [`synth`] - seeded synthetic maps and annotation corruption
//! * [`io`] - PNG and GeoJSON
//! * [`pipeline`] - whole-map operations behind the command line tool

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annot;
pub mod chanvese;
pub mod error;
pub mod geom;
pub mod grid;
pub mod io;
pub mod lca;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
pub use geom::{Point, Polyline};
pub use grid::{BinaryMask, LevelSet, RasterImage, ScalarGrid};
