//! Core algorithms for fractal calibration of long-tailed object detectors.
//!
//! This crate is `no_std` (it needs `alloc`) and contains only pure
//! computation:
//!
//! * [`annotations`]: normalized object instances, class frequencies and
//!   spatial histograms over a `G x G` grid of the unit square.
//! * [`fractal`]: box-counting estimation of the fractal dimension of each
//!   class's object locations, with the quadratic threshold rule.
//! * [`calibration`]: post-hoc logit adjustments (class, grid, space,
//!   FRACAL, binary FRACAL and the frequency-only baselines).
//! * [`synthetic`]: seeded point processes and long-tailed detection
//!   scenarios used as oracles.
//! * [`eval`]: IoU, non-maximum suppression and average precision.
//!
//! File formats, the command-line front-end and parallel drivers live in the
//! `fracal` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod annotations;
pub mod calibration;
pub mod error;
pub mod eval;
pub mod fractal;
pub mod geometry;
pub mod synthetic;

pub use annotations::{ClassFrequency, Dataset, Group, ImageSize, ObjectInstance, SpatialHistogram};
pub use calibration::{CalibratedScores, CalibrationWeights, ClassPrior, LogitRecord, Method, Mode};
pub use error::{Error, Result};
pub use eval::{Detection, EvalConfig, EvalReport};
pub use fractal::{BoxCountSeries, FractalConfig, FractalEstimate, Variant};
pub use geometry::{Center, NormBox};
