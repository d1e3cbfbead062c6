//! ROI-based skip coding for moving-camera aerial video.

pub mod analysis;
pub mod bitstream;
pub mod cli;
pub mod codec;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod global_motion;
pub mod io;
pub mod pipeline;
pub mod postproc;
pub mod roi;
pub mod synth;

pub use error::{Error, Result};
pub use frame::Frame;
pub use geometry::{CoverageMask, Homography, Point};
pub use roi::{RoiLabel, RoiMask};
