//! Floorplan localization from planar depth rays.
//!
//! * [`floorplan`]: occupancy grids, exact ray casting, synthetic scenes.
//! * [`posespace`]: discretized `(x, y, theta)` probability maps.
//! * [`observation`]: scan likelihood maps, map fusion, ray loss.
//! * [`filter`]: histogram Bayes filter and trajectory tracking.
//! * [`style`]: room-style constraint matrices, InfoMap clustering, losses.
//! * [`evaluation`]: recall and RMSE metrics and reports.

pub mod error;
pub mod evaluation;
pub mod filter;
pub mod floorplan;
pub mod observation;
pub mod posespace;
pub mod style;

pub use error::{Error, Result};
pub use nalgebra;
pub use floorplan::{DepthRayScan, FloorplanGrid, Pose};
pub use posespace::{PoseGridSpec, ProbMap};
