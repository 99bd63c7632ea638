//! Geometry-aware egocentric 3D mapping: posed camera views are lifted
//! into a stabilized voxel feature memory that supports egomotion
//! estimation, novel-view prediction, 3D object detection and latent
//! scene arithmetic, verified against a built-in analytic scene
//! simulator.

pub mod config;
pub mod detection;
pub mod egomotion;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod memory;
pub mod pipeline;
pub mod projection;
pub mod sim;
pub mod unproject;
pub mod volume;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, GridSpec, Pose};
pub use image::{DepthMap, Image};
pub use volume::{FeatureVolume, OccupancyGrid, OCCUPANCY_CHANNEL, PIPELINE_CHANNELS};
