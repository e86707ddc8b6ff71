//! Geometry core for keypoint-based monocular 3D vehicle detection.
//!
//! The crate has two halves:
//!
//! * detection-time geometry: camera model ([`geometry`]), the
//!   confidence-weighted linear translation solver ([`pose_solver`]) and the
//!   Multi-Bin orientation codec ([`orientation`]);
//! * label generation: a PCA-deformable vehicle template ([`shape`]), a soft
//!   silhouette rasterizer ([`raster`]) and the shape/pose fitter that turns
//!   instance masks plus LiDAR points into 2D/3D keypoint labels
//!   ([`autolabel`]).
//!
//! [`boxes`] holds rotated box IoU metrics, [`kitti`] and [`kpfile`] the file
//! formats, and [`synth`] a seeded scene generator used as a desk-scale
//! substitute for real driving data.

pub mod autolabel;
pub mod boxes;
pub mod error;
pub mod geometry;
pub mod kitti;
pub mod kpfile;
pub mod orientation;
pub mod pose_solver;
pub mod raster;
pub mod shape;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pose};
