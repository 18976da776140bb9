//! Geometric core of center-voting 6D object pose estimation.
//!
//! - [`geom`]: quaternions, rigid poses, pinhole projection.
//! - [`fields`]: label maps, per-class center-direction/depth fields, depth maps.
//! - [`voting`]: Hough voting for object centers and translation recovery.
//! - [`losses`]: point-matching and shape-matching rotation losses with gradients.
//! - [`metrics`]: ADD, ADD-S, reprojection error, accuracy curves and AUC.
//! - [`refine`]: multi-hypothesis point-to-plane ICP.
//! - [`synth`]: z-buffered synthetic scenes that stand in for network output.

pub mod error;
pub mod fields;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod ply;
pub mod refine;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod voting;

pub use error::{Error, Result};
pub use fields::{CenterField, DepthMap, LabelMap};
pub use geom::{CameraIntrinsics, Pose, Quaternion};
pub use model::ObjectModel;
