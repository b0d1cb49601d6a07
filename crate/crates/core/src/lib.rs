//! Vehicle detection on very-high-resolution multispectral imagery and
//! transportation-density analytics.

pub mod analytics;
pub mod candidates;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod morph;
pub mod netcore;
pub mod pipeline;
pub mod postproc;
pub mod raster;
pub mod roadmask;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
