//! Markerless visuotactile sensing: color-to-normal calibration, gel depth
//! reconstruction with a sine-transform Poisson solver, and normal force
//! regression with multi-level convolutional networks and a polynomial
//! baseline, plus a synthetic gel simulator that serves as ground truth.

pub mod calib;
pub mod dataio;
pub mod depth;
pub mod error;
pub mod experiment;
pub mod forcereg;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ImageF32 = image::Image<f32>;
pub type ImageF64 = image::Image<f64>;
pub type NetworkF32 = nn::Network<f32>;
pub type NetworkF64 = nn::Network<f64>;
