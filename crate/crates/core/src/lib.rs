//! Emulation of expensive 2-D functions with partial discontinuities at
//! known locations, by tearing the input space along the discontinuities,
//! embedding it in 3-D and using a non-stationary covariance that undoes
//! the local stretching of the embedding.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod covkernel;
pub mod design;
pub mod embedding;
pub mod emulator;
pub mod error;
pub mod geometry;
pub mod models;
pub mod nscov;

pub use covkernel::{KernelFamily, KernelSpec};
pub use design::{DesignState, StraddleRequest, UciSpec};
pub use emulator::{AdjustedEmulator, KernelMode, PriorSpec, TrainingSet};
pub use embedding::{EmbeddingSurface, LocalMetric, RegionId, SurfaceShape};
pub use error::{Error, Result};
pub use geometry::{Domain, Point2, Polyline, Segment};
pub use models::{NpvParams, TestFunction};
pub use nscov::NsCovSpec;
