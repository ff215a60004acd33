//! Hyperspectral band selection and seed classification toolkit.
//!
//! The crate covers the full workflow for finding the informative region of a
//! near-infrared hyperspectral cube and classifying seed phenotypes on it:
//!
//! * [`cube`] — cube storage, radiometric calibration, wavelength mapping
//! * [`segment`] — background thresholding, connected components, ROI extraction
//! * [`nn`] — minimal LSTM/CNN engine with exact analytic gradients and Adam
//! * [`screen`] — per-interval LSTM training and convergence-based noise removal
//! * [`scan`] — band-by-band CNN accuracy profiling and dense-interval selection
//! * [`synth`] — synthetic cubes with planted noise levels and class signal
//! * [`pipeline`] — one-config orchestration of the whole flow
//!
//! Data-parallel loops (per-interval trainings, per-band evaluations, per-seed
//! generation) run on rayon when the default `parallel` feature is enabled and
//! sequentially otherwise; both schedules produce bit-identical results.

pub mod cube;
pub mod error;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scan;
pub mod screen;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
