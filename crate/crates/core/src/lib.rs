//! Extraction of temporally consistent 2-D keypoint trajectories from
//! manipulation videos.
//!
//! Stages, each in its own module:
//!
//! - [`frame_io`]: decode numbered frame directories, resize, pick the seed frame
//! - [`proposal`]: ask a vision-language model for labelled keypoints
//! - [`tracker`]: pyramidal least-squares point tracking in chained windows
//! - [`bidi_filter`]: forward/backward cycle checks
//! - [`postprocess`]: gap filling, smoothing, end-effector retargeting
//! - [`trajstore`]: bundle serialization, CSV export, overlay rendering
//! - [`pipeline`]: stage orchestration and exit-code mapping

pub mod bidi_filter;
pub mod canonical;
pub mod config;
pub mod frame_io;
pub mod pipeline;
pub mod postprocess;
pub mod proposal;
pub mod raster;
pub mod tracker;
pub mod trajstore;

use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;

/// Sub-pixel image position; origin top-left, x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// `self + (other - self) * t`, exact at `t = 0` and `t = 1`.
    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x * (1.0 - t) + other.x * t, self.y * (1.0 - t) + other.y * t)
    }
}
