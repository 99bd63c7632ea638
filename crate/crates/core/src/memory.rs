//! Recurrent fusion of stabilized feature volumes into the latent map,
//! and the frame-by-frame integration pipeline that produces it.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::egomotion::{
    estimate_egomotion, orient_first_view, score_rotations, stabilize, RotationStackSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{
    pose_to_camera_transform, relative_rotation, CameraIntrinsics, GridSpec, Pose,
};
use crate::image::{DepthMap, Image};
use crate::io::{read_grnv, write_grnv};
use crate::unproject::{mask_volume, unproject_depth, unproject_image};
use crate::volume::{Conv3dKernel, FeatureVolume, OccupancyGrid, PIPELINE_CHANNELS};

/// Parameters of the 3D convolutional GRU: input and state kernels plus
/// bias for the update gate (z), reset gate (r) and candidate state (h).
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Conv3dKernel,
    pub u_z: Conv3dKernel,
    pub b_z: Vec<f32>,
    pub w_r: Conv3dKernel,
    pub u_r: Conv3dKernel,
    pub b_r: Vec<f32>,
    pub w_h: Conv3dKernel,
    pub u_h: Conv3dKernel,
    pub b_h: Vec<f32>,
}

impl GruWeights {
    pub fn zeros(kernel_size: usize, channels: usize) -> Self {
        let k = || Conv3dKernel::zeros(kernel_size, channels, channels);
        GruWeights {
            w_z: k(),
            u_z: k(),
            b_z: vec![0.0; channels],
            w_r: k(),
            u_r: k(),
            b_r: vec![0.0; channels],
            w_h: k(),
            u_h: k(),
            b_h: vec![0.0; channels],
        }
    }

    /// Reproducible weights drawn uniformly from [-0.1, 0.1].
    pub fn seeded(seed: u64, kernel_size: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = |rng: &mut ChaCha8Rng| {
            let n = kernel_size * kernel_size * kernel_size * channels * channels;
            let weights = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            Conv3dKernel::new(kernel_size, channels, channels, weights)
                .expect("seeded kernel dims are valid")
        };
        let bias =
            |rng: &mut ChaCha8Rng| (0..channels).map(|_| rng.random_range(-0.1..0.1)).collect();
        GruWeights {
            w_z: kernel(&mut rng),
            u_z: kernel(&mut rng),
            b_z: bias(&mut rng),
            w_r: kernel(&mut rng),
            u_r: kernel(&mut rng),
            b_r: bias(&mut rng),
            w_h: kernel(&mut rng),
            u_h: kernel(&mut rng),
            b_h: bias(&mut rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_z.c_in
    }

    /// Serialize as a sequence of nine GRNV blocks (kernels as
    /// k x k x k x (c_in*c_out), biases as 1 x 1 x 1 x c) in the order
    /// w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let kernel_vol = |kern: &Conv3dKernel| FeatureVolume {
            grid: GridSpec {
                w: kern.k,
                h: kern.k,
                d: kern.k,
                side: kern.k as f64,
                center_distance: 0.0,
            },
            channels: kern.c_in * kern.c_out,
            data: kern.weights.clone(),
        };
        let bias_vol = |b: &Vec<f32>| FeatureVolume {
            grid: GridSpec {
                w: 1,
                h: 1,
                d: 1,
                side: 1.0,
                center_distance: 0.0,
            },
            channels: b.len(),
            data: b.clone(),
        };
        for vol in [
            kernel_vol(&self.w_z),
            kernel_vol(&self.u_z),
            bias_vol(&self.b_z),
            kernel_vol(&self.w_r),
            kernel_vol(&self.u_r),
            bias_vol(&self.b_r),
            kernel_vol(&self.w_h),
            kernel_vol(&self.u_h),
            bias_vol(&self.b_h),
        ] {
            write_grnv(&vol, &mut w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, channels: usize) -> Result<Self> {
        let kernel = |r: &mut R| -> Result<Conv3dKernel> {
            let vol = read_grnv(&mut *r, 1.0, 0.0)?;
            if vol.channels != channels * channels || vol.grid.w != vol.grid.h {
                return Err(Error::shape(format!(
                    "GRU kernel block: got {}x{}x{}x{}, expected k^3 x {}",
                    vol.grid.w,
                    vol.grid.h,
                    vol.grid.d,
                    vol.channels,
                    channels * channels
                )));
            }
            Conv3dKernel::new(vol.grid.w, channels, channels, vol.data)
        };
        let bias = |r: &mut R| -> Result<Vec<f32>> {
            let vol = read_grnv(&mut *r, 1.0, 0.0)?;
            if vol.channels != channels || vol.grid.voxel_count() != 1 {
                return Err(Error::shape(format!(
                    "GRU bias block: got {} values, expected {channels}",
                    vol.data.len()
                )));
            }
            Ok(vol.data)
        };
        Ok(GruWeights {
            w_z: kernel(&mut r)?,
            u_z: kernel(&mut r)?,
            b_z: bias(&mut r)?,
            w_r: kernel(&mut r)?,
            u_r: kernel(&mut r)?,
            b_r: bias(&mut r)?,
            w_h: kernel(&mut r)?,
            u_h: kernel(&mut r)?,
            b_h: bias(&mut r)?,
        })
    }
}

/// All-zero initial memory.
pub fn init_memory(grid: GridSpec, channels: usize) -> FeatureVolume {
    FeatureVolume::zeros(grid, channels)
}

/// Incremental mean: with `running` holding the mean of the first t-1
/// views, returns the mean including view `v` (t is 1-based).
pub fn update_average(
    running: &FeatureVolume,
    v: &FeatureVolume,
    t: usize,
) -> Result<FeatureVolume> {
    assert!(t >= 1, "view index is 1-based");
    if !running.same_shape(v) {
        return Err(Error::shape("update_average: shape mismatch"));
    }
    let mut out = running.clone();
    let inv_t = 1.0f32 / t as f32;
    for (m, x) in out.data.iter_mut().zip(&v.data) {
        *m += (*x - *m) * inv_t;
    }
    Ok(out)
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Convolutional GRU state update:
/// z = sigma(conv(v; Wz) + conv(m; Uz) + bz),
/// r = sigma(conv(v; Wr) + conv(m; Ur) + br),
/// h = tanh(conv(v; Wh) + conv(r .* m; Uh) + bh),
/// m' = (1 - z) .* m + z .* h.
pub fn update_gru(
    m: &FeatureVolume,
    v: &FeatureVolume,
    weights: &GruWeights,
) -> Result<FeatureVolume> {
    if !m.same_shape(v) {
        return Err(Error::shape("update_gru: shape mismatch"));
    }
    let zero_bias = vec![0.0f32; weights.channels()];
    let mut z = v.conv3d(&weights.w_z, &weights.b_z)?;
    let zm = m.conv3d(&weights.u_z, &zero_bias)?;
    for (a, b) in z.data.iter_mut().zip(&zm.data) {
        *a = sigmoid(*a + *b);
    }
    let mut r = v.conv3d(&weights.w_r, &weights.b_r)?;
    let rm = m.conv3d(&weights.u_r, &zero_bias)?;
    for (a, b) in r.data.iter_mut().zip(&rm.data) {
        *a = sigmoid(*a + *b);
    }
    let mut gated = m.clone();
    for (a, b) in gated.data.iter_mut().zip(&r.data) {
        *a *= *b;
    }
    let mut h = v.conv3d(&weights.w_h, &weights.b_h)?;
    let hm = gated.conv3d(&weights.u_h, &zero_bias)?;
    for (a, b) in h.data.iter_mut().zip(&hm.data) {
        *a = (*a + *b).tanh();
    }
    let mut out = m.clone();
    for n in 0..out.data.len() {
        out.data[n] = (1.0 - z.data[n]) * m.data[n] + z.data[n] * h.data[n];
    }
    Ok(out)
}

/// One input view.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub depth: Option<DepthMap>,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub enum FusionMode {
    Average,
    Gru(GruWeights),
}

#[derive(Debug, Clone)]
pub enum EgoMode {
    /// Use the ground-truth relative rotation from the frame poses.
    Given,
    /// Estimate the rotation by matching against the memory.
    Estimated {
        stack: RotationStackSpec,
        temperature: f64,
        /// Take the argmax candidate instead of the weighted average.
        argmax: bool,
    },
}

/// Orientation of the memory grid: the camera-aligned frame of a
/// zero-elevation virtual view at the first frame's azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryFrame {
    pub azimuth_deg: f64,
    pub radius: f64,
    pub grid: GridSpec,
}

impl MemoryFrame {
    pub fn pose(&self) -> Pose {
        Pose::new(self.azimuth_deg, 0.0, self.radius)
    }

    /// World position of a (fractional) memory voxel index.
    pub fn index_to_world(&self, idx: Vector3<f64>) -> Vector3<f64> {
        let t = pose_to_camera_transform(&self.pose());
        let pitch = self.grid.pitch();
        let c = self.grid.center_index();
        t.to_world(Vector3::new(
            (idx.x - c.x) * pitch.x,
            (idx.y - c.y) * pitch.y,
            self.grid.center_distance + (idx.z - c.z) * pitch.z,
        ))
    }

    /// Fractional memory voxel index of a world point.
    pub fn world_to_index(&self, p: Vector3<f64>) -> Vector3<f64> {
        let t = pose_to_camera_transform(&self.pose());
        self.grid.camera_to_index(t.to_camera(p))
    }
}

/// Result of integrating a frame sequence.
#[derive(Debug, Clone)]
pub struct Integration {
    pub memory: FeatureVolume,
    pub frame: MemoryFrame,
    /// Relative rotation applied per frame (the first entry is the
    /// elevation orientation of the first view).
    pub egomotion_log: Vec<(f64, f64)>,
}

/// Unproject one frame into the pipeline's 4-channel volume:
/// depth-masked RGB plus the depth shell as the occupancy channel.
/// Without a depth map the shell is all ones (pure RGB unprojection).
pub fn build_frame_volume(frame: &Frame, intr: &CameraIntrinsics, grid: &GridSpec) -> FeatureVolume {
    let rgb = unproject_image(&frame.image, intr, grid);
    let shell = match &frame.depth {
        Some(depth) => unproject_depth(depth, intr, grid),
        None => OccupancyGrid::filled(*grid),
    };
    let masked = mask_volume(&rgb, &shell).expect("grids match by construction");
    let mut out = FeatureVolume::zeros(*grid, PIPELINE_CHANNELS);
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let dst = out.index(i, j, k, 0);
                let src = masked.index(i, j, k, 0);
                out.data[dst..dst + 3].copy_from_slice(&masked.data[src..src + 3]);
                out.data[dst + 3] = shell.data[shell.index(i, j, k)] as f32;
            }
        }
    }
    out
}

/// Integrate a posed frame sequence into the latent map.
///
/// The first frame is oriented by its absolute elevation (assumed
/// given); later frames are stabilized by the given or estimated
/// relative rotation and fused with the running memory.
pub fn integrate_views(
    frames: &[Frame],
    intr: &CameraIntrinsics,
    grid: &GridSpec,
    fusion: &FusionMode,
    ego: &EgoMode,
) -> Result<Integration> {
    assert!(!frames.is_empty(), "integrate_views needs at least one frame");
    let first_pose = frames[0].pose;
    let mem_frame = MemoryFrame {
        azimuth_deg: first_pose.azimuth_deg,
        radius: first_pose.radius,
        grid: *grid,
    };
    let mem_pose = mem_frame.pose();
    let mut log = Vec::with_capacity(frames.len());
    let mut memory = init_memory(*grid, PIPELINE_CHANNELS);
    for (n, frame) in frames.iter().enumerate() {
        let vol = build_frame_volume(frame, intr, grid);
        let aligned = if n == 0 {
            log.push((0.0, first_pose.elevation_deg));
            orient_first_view(&vol, first_pose.elevation_deg)
        } else {
            let rot = match ego {
                EgoMode::Given => relative_rotation(&frame.pose, &mem_pose),
                EgoMode::Estimated {
                    stack,
                    temperature,
                    argmax,
                } => {
                    let dist = score_rotations(&vol, &memory, stack, *temperature)?;
                    if *argmax {
                        dist.argmax()
                    } else {
                        estimate_egomotion(&dist)
                    }
                }
            };
            log.push(rot);
            stabilize(&vol, rot)
        };
        memory = match fusion {
            FusionMode::Average => update_average(&memory, &aligned, n + 1)?,
            FusionMode::Gru(weights) => update_gru(&memory, &aligned, weights)?,
        };
    }
    Ok(Integration {
        memory,
        frame: mem_frame,
        egomotion_log: log,
    })
}
