//! Scale-separated downscaling and bias correction of gridded fields.
//!
//! The crate is organised around [`fields::FieldStack`], a
//! `(time, variable, row, col)` array with an explicit validity mask:
//!
//! * [`spectral`] and [`blur`] split fields into a shared large-scale part and
//!   a domain-specific residual (sharp Fourier cutoff or masked Gaussian blur).
//! * [`pairs`] builds normalised pseudo-pairs for training and projects coarse
//!   source fields into the shared space for inference.
//! * [`flow`] is a small conditional flow-matching generator with an Euler
//!   sampler and ensemble statistics.
//! * [`cutoff`] picks the cutoff wavelength with a domain classifier.
//! * [`cdft`] is the CDF-t quantile-mapping baseline.
//! * [`metrics`] and [`calib`] hold the evaluation and ensemble-calibration
//!   diagnostics.
//! * [`synth`] generates seeded synthetic fields and test scenarios.

pub mod blur;
pub mod calib;
pub mod cdft;
pub mod csv;
pub mod cutoff;
pub mod error;
pub mod fields;
pub mod flow;
pub mod kv;
pub mod metrics;
pub mod pairs;
pub mod rng;
pub mod scale;
pub mod spectral;
pub mod synth;
pub mod wfld;

pub use error::{Error, Result};
pub use fields::{FieldStack, Frame, GridSpec, MomentMaps};
pub use scale::{Decomposition, Separator};
