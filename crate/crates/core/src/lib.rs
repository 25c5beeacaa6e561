//! Grasp pose detection for transparent objects from multi-view plenoptic
//! observations.

pub mod classifier;
pub mod dlv;
pub mod error;
pub mod features;
pub mod lf_geometry;
pub mod plenoptic_io;
pub mod pose;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
