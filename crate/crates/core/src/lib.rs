//! Straight edge-segment detection and plumb-line lens distortion calibration.

pub mod chaining;
pub mod dataset;
pub mod distortion;
pub mod edge_detect;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod segments;
pub mod synth;

pub use chaining::{EdgeSegment, OrientationClass, Point};
pub use error::{Error, Result};
