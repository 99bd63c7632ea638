//! Pipeline defaults and the JSON config file the CLI reads.

use serde::{Deserialize, Serialize};

use crate::egomotion::{RotationStackSpec, DEFAULT_TEMPERATURE};
use crate::geometry::{CameraIntrinsics, GridSpec, Pose};

/// Calibration constants of the standard experiment. Every field has a
/// default; a config file may override any subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub intrinsics: CameraIntrinsics,
    /// Viewing-sphere radius.
    pub radius: f64,
    /// Camera elevations of the viewing protocol, degrees.
    pub elevations_deg: Vec<f64>,
    /// Azimuth spacing of the viewing protocol, degrees.
    pub azimuth_step_deg: f64,
    /// Softmax temperature of the egomotion scorer.
    pub temperature: f64,
    /// Occupancy threshold of the first-hit view decoder.
    pub composite_threshold: f32,
    /// Occupancy threshold for detection proposals.
    pub propose_threshold: f32,
    /// Minimum connected-component size for a proposal, voxels.
    pub min_voxels: usize,
    /// NMS IoU cutoff.
    pub nms_iou: f64,
    /// Occupancy threshold for ROI masks.
    pub mask_threshold: f32,
    /// Total per-axis shrink of fitted boxes, in voxel pitches,
    /// compensating the outward bias of thresholded depth shells.
    pub box_deflate_voxels: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridSpec::default(),
            intrinsics: CameraIntrinsics::centered(55.0, 64, 64),
            radius: 4.0,
            elevations_deg: vec![20.0, 40.0, 60.0],
            azimuth_step_deg: 20.0,
            temperature: DEFAULT_TEMPERATURE,
            composite_threshold: 0.5,
            propose_threshold: 0.05,
            min_voxels: 6,
            nms_iou: 0.35,
            mask_threshold: 0.04,
            box_deflate_voxels: 2.0,
        }
    }
}

impl PipelineConfig {
    /// All poses of the viewing protocol (elevation-major order).
    pub fn protocol_poses(&self) -> Vec<Pose> {
        let azimuths = (360.0 / self.azimuth_step_deg).round() as usize;
        let mut poses = Vec::with_capacity(azimuths * self.elevations_deg.len());
        for &el in &self.elevations_deg {
            for n in 0..azimuths {
                poses.push(Pose::new(n as f64 * self.azimuth_step_deg, el, self.radius));
            }
        }
        poses
    }

    /// Candidate rotations matched against a ground-parallel memory:
    /// the full azimuth circle crossed with the protocol elevations.
    pub fn rotation_stack(&self) -> RotationStackSpec {
        RotationStackSpec::full_azimuth_circle(self.azimuth_step_deg, self.elevations_deg.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_protocol() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.protocol_poses().len(), 54);
        assert_eq!(cfg.rotation_stack().len(), 54);
        assert_eq!(cfg.grid.w, 32);
        assert_eq!(cfg.intrinsics.width, 64);
    }

    #[test]
    fn partial_config_files_fill_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"radius": 5.0}"#).unwrap();
        assert_eq!(cfg.radius, 5.0);
        assert_eq!(cfg.grid.w, 32);
    }
}
