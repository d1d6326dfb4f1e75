//! Numerical core of the speckle interpolation lab.
//!
//! The crate covers everything that does not involve learning:
//!
//! * [`optics`] turns phase objects into fully developed speckle through a
//!   random phase screen and a far-field transform.
//! * [`sampling`] measures the sampling factor of a pattern from its
//!   autocorrelation and down-samples it by pixel binning.
//! * [`interp`] holds the nearest / bilinear / bicubic baselines.
//! * [`metrics`] provides PCC, NPCC, MSE, the combined loss, dataset mutual
//!   correlation and the reconstruction success rate.
//! * [`io`] reads and writes the `SPK1` / `PHO1` raster files.

pub mod error;
pub mod fft;
pub mod interp;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod raster;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use interp::InterpMethod;
pub use optics::{PhaseObject, ScatteringMedium, SpecklePattern};
pub use raster::{PitchIndex, Raster};
pub use sampling::SamplingSpec;
