//! Glacier mapping toolkit: multi-source raster stacks, derived features,
//! label synthesis, patch datasets, a small autodiff engine with the CryoNet
//! segmentation model, and training/evaluation.

pub mod dataset;
pub mod error;
pub mod features;
pub mod labels;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
