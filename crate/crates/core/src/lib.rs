//! Scene-text mask refinement and text-removal evaluation.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod maskmix;
pub mod merge;
pub mod metrics;
pub mod morphology;
pub mod pipeline;
pub mod raster;
pub mod superpixel;

pub use error::{Error, Result};
