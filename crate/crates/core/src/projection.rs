//! Projecting the memory volume to a query view as depth-sliced feature
//! maps, and the deterministic first-hit decoder.

use nalgebra::Vector3;

use crate::geometry::{relative_rotation, rotation_yaw_pitch, CameraIntrinsics, Pose};
use crate::image::{DepthMap, Image};
use crate::volume::{FeatureVolume, OCCUPANCY_CHANNEL};

/// Stack of per-depth projected feature maps.
#[derive(Debug, Clone)]
pub struct ProjectedStack {
    /// One `w x h x c` map per depth slice, near to far.
    pub slices: Vec<Image>,
    /// Camera-frame depth of each slice.
    pub depths: Vec<f64>,
}

/// Project the memory to the camera axis given by the relative rotation
/// `(azimuth, elevation)` from the memory frame to the query view.
///
/// Depth slices are the voxel-pitch bin centers spanning
/// [D - side/2, D + side/2]; for every pixel and slice the ray is
/// backcast to its 3D point and the memory sampled there (the rotation
/// to the query axis is folded into the sampling, so the volume is
/// interpolated exactly once).
pub fn project_volume(
    memory: &FeatureVolume,
    rotation: (f64, f64),
    intr: &CameraIntrinsics,
) -> ProjectedStack {
    let grid = memory.grid;
    let pitch = grid.pitch();
    let center = grid.center_index();
    // Destination (query grid) to source (memory) offset map.
    let to_source = rotation_yaw_pitch(rotation.0, rotation.1).transpose();
    let mut slices = Vec::with_capacity(grid.d);
    let mut depths = Vec::with_capacity(grid.d);
    let mut sample = vec![0.0f32; memory.channels];
    for k in 0..grid.d {
        let z = grid.center_distance + (k as f64 - center.z) * pitch.z;
        let mut map = Image::zeros(intr.width, intr.height, memory.channels);
        if z > 0.0 {
            for y in 0..intr.height {
                let py = (y as f64 - intr.cy) * z / intr.f;
                for x in 0..intr.width {
                    let px = (x as f64 - intr.cx) * z / intr.f;
                    let dest = Vector3::new(px, py, z - grid.center_distance);
                    let src = to_source * dest;
                    memory.sample_trilinear(
                        src.x / pitch.x + center.x,
                        src.y / pitch.y + center.y,
                        src.z / pitch.z + center.z,
                        &mut sample,
                    );
                    map.pixel_mut(x, y).copy_from_slice(&sample);
                }
            }
        }
        slices.push(map);
        depths.push(z);
    }
    ProjectedStack { slices, depths }
}

/// Resolve visibility front-to-back: per pixel, the first slice whose
/// occupancy channel reaches `threshold` contributes its RGB and depth;
/// pixels with no hit get the background color and infinite depth.
pub fn composite_first_hit(
    stack: &ProjectedStack,
    threshold: f32,
    background: [f32; 3],
) -> (Image, DepthMap) {
    assert!(!stack.slices.is_empty(), "empty projection stack");
    let (width, height) = (stack.slices[0].width, stack.slices[0].height);
    let channels = stack.slices[0].channels;
    assert!(
        channels > OCCUPANCY_CHANNEL,
        "composite_first_hit needs (R, G, B, occupancy) slices"
    );
    let mut rgb = Image::zeros(width, height, 3);
    let mut depth = DepthMap::filled(width, height, f32::INFINITY);
    for y in 0..height {
        for x in 0..width {
            let mut hit = false;
            for (slice, z) in stack.slices.iter().zip(&stack.depths) {
                let px = slice.pixel(x, y);
                if px[OCCUPANCY_CHANNEL] >= threshold {
                    rgb.pixel_mut(x, y).copy_from_slice(&px[0..3]);
                    depth.set(x, y, *z as f32);
                    hit = true;
                    break;
                }
            }
            if !hit {
                rgb.pixel_mut(x, y).copy_from_slice(&background);
            }
        }
    }
    (rgb, depth)
}

/// Predict the view from `query` of a memory whose frame sits at
/// `memory_azimuth_deg` (zero elevation): project, then composite.
pub fn predict_view(
    memory: &FeatureVolume,
    memory_azimuth_deg: f64,
    query: &Pose,
    intr: &CameraIntrinsics,
    threshold: f32,
) -> (Image, DepthMap) {
    let mem_pose = Pose::new(memory_azimuth_deg, 0.0, query.radius);
    let rotation = relative_rotation(query, &mem_pose);
    let stack = project_volume(memory, rotation, intr);
    composite_first_hit(&stack, threshold, [0.0, 0.0, 0.0])
}
