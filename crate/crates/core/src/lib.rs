//! Desk-scale reservoir-computing workbench built around a simulated
//! multi-electrode array: stimulus pattern generation, a spiking-network
//! culture stand-in, spike detection, response statistics, feature
//! extraction, an echo-state-network baseline, a softmax perceptron readout,
//! and the experiment harness tying them together.

pub mod classifier;
pub mod config;
pub mod culture;
pub mod detect;
pub mod error;
pub mod esn;
pub mod experiment;
pub mod features;
pub mod mea;
pub mod raster;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
