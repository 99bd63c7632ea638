//! The 4D feature tensor and its algebra: rotation resampling,
//! elementwise arithmetic, inner products and 3D convolution.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{rotation_yaw_pitch, trilinear_sample, GridSpec};

/// Channel holding the occupancy evidence in pipeline volumes.
/// Pipeline layout is (R, G, B, occupancy).
pub const OCCUPANCY_CHANNEL: usize = 3;
/// Channel count of pipeline volumes (RGB + occupancy).
pub const PIPELINE_CHANNELS: usize = 4;

/// Dense `w x h x d x c` tensor of f32 features on a [`GridSpec`].
///
/// Linear layout: `data[((i * h + j) * d + k) * c + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub grid: GridSpec,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureVolume {
    pub fn zeros(grid: GridSpec, channels: usize) -> Self {
        FeatureVolume {
            grid,
            channels,
            data: vec![0.0; grid.voxel_count() * channels],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, ch: usize) -> usize {
        ((i * self.grid.h + j) * self.grid.d + k) * self.channels + ch
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, ch: usize) -> f32 {
        self.data[self.index(i, j, k, ch)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, ch: usize, v: f32) {
        let idx = self.index(i, j, k, ch);
        self.data[idx] = v;
    }

    pub fn same_shape(&self, other: &FeatureVolume) -> bool {
        self.grid.w == other.grid.w
            && self.grid.h == other.grid.h
            && self.grid.d == other.grid.d
            && self.channels == other.channels
    }

    fn require_same_shape(&self, other: &FeatureVolume, op: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{op}: {}x{}x{}x{} vs {}x{}x{}x{}",
                self.grid.w,
                self.grid.h,
                self.grid.d,
                self.channels,
                other.grid.w,
                other.grid.h,
                other.grid.d,
                other.channels
            )))
        }
    }

    /// Trilinear sample at fractional index coordinates, zero outside.
    pub fn sample_trilinear(&self, fi: f64, fj: f64, fk: f64, out: &mut [f32]) {
        trilinear_sample(
            &self.data,
            self.grid.w,
            self.grid.h,
            self.grid.d,
            self.channels,
            fi,
            fj,
            fk,
            out,
        );
    }

    /// Extract a single channel as a 1-channel volume.
    pub fn channel(&self, ch: usize) -> FeatureVolume {
        let mut out = FeatureVolume::zeros(self.grid, 1);
        for (dst, src) in out
            .data
            .iter_mut()
            .zip(self.data.iter().skip(ch).step_by(self.channels))
        {
            *dst = *src;
        }
        out
    }

    /// Resample through a grid-frame rotation: the value written at
    /// destination voxel `x` is the trilinear sample of `self` at the
    /// metric offset `dest_to_source * (x - center)`. Vacated voxels
    /// are zero.
    pub fn resample_rotated(&self, dest_to_source: &Matrix3<f64>) -> FeatureVolume {
        let grid = self.grid;
        let pitch = grid.pitch();
        let center = grid.center_index();
        let mut out = FeatureVolume::zeros(grid, self.channels);
        let mut sample = vec![0.0f32; self.channels];
        for i in 0..grid.w {
            let ox = (i as f64 - center.x) * pitch.x;
            for j in 0..grid.h {
                let oy = (j as f64 - center.y) * pitch.y;
                for k in 0..grid.d {
                    let oz = (k as f64 - center.z) * pitch.z;
                    let src = dest_to_source * nalgebra::Vector3::new(ox, oy, oz);
                    self.sample_trilinear(
                        src.x / pitch.x + center.x,
                        src.y / pitch.y + center.y,
                        src.z / pitch.z + center.z,
                        &mut sample,
                    );
                    let base = out.index(i, j, k, 0);
                    out.data[base..base + self.channels].copy_from_slice(&sample);
                }
            }
        }
        out
    }

    /// Rotate the volume content by (Δazimuth, Δelevation) about the
    /// grid center: yaw about the vertical axis first, then pitch about
    /// the horizontal axis. Voxels whose source falls outside the grid
    /// become zero.
    pub fn rotate(&self, azimuth_deg: f64, elevation_deg: f64) -> FeatureVolume {
        let rot = rotation_yaw_pitch(azimuth_deg, elevation_deg);
        self.resample_rotated(&rot.transpose())
    }

    pub fn add(&self, other: &FeatureVolume) -> Result<FeatureVolume> {
        self.require_same_shape(other, "add_volumes")?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &FeatureVolume) -> Result<FeatureVolume> {
        self.require_same_shape(other, "sub_volumes")?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= *b;
        }
        Ok(out)
    }

    pub fn scale(&self, s: f32) -> FeatureVolume {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    /// Sum of elementwise products, accumulated in linear-index order
    /// so the result is bit-reproducible.
    pub fn inner_product(&self, other: &FeatureVolume) -> Result<f64> {
        self.require_same_shape(other, "inner_product")?;
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += (*a as f64) * (*b as f64);
        }
        Ok(acc)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum()
    }

    /// Same-size 3D convolution (cross-correlation, zero padding,
    /// stride 1).
    pub fn conv3d(&self, kernel: &Conv3dKernel, bias: &[f32]) -> Result<FeatureVolume> {
        if kernel.c_in != self.channels {
            return Err(Error::shape(format!(
                "conv3d: kernel expects {} input channels, volume has {}",
                kernel.c_in, self.channels
            )));
        }
        if bias.len() != kernel.c_out {
            return Err(Error::shape(format!(
                "conv3d: bias length {} != {} output channels",
                bias.len(),
                kernel.c_out
            )));
        }
        let grid = self.grid;
        let (w, h, d) = (grid.w as isize, grid.h as isize, grid.d as isize);
        let half = (kernel.k / 2) as isize;
        let mut out = FeatureVolume::zeros(grid, kernel.c_out);
        for i in 0..w {
            for j in 0..h {
                for k in 0..d {
                    let base = out.index(i as usize, j as usize, k as usize, 0);
                    out.data[base..base + kernel.c_out].copy_from_slice(bias);
                    for di in 0..kernel.k as isize {
                        let si = i + di - half;
                        if si < 0 || si >= w {
                            continue;
                        }
                        for dj in 0..kernel.k as isize {
                            let sj = j + dj - half;
                            if sj < 0 || sj >= h {
                                continue;
                            }
                            for dk in 0..kernel.k as isize {
                                let sk = k + dk - half;
                                if sk < 0 || sk >= d {
                                    continue;
                                }
                                let src =
                                    self.index(si as usize, sj as usize, sk as usize, 0);
                                let wbase = kernel.tap_index(
                                    di as usize,
                                    dj as usize,
                                    dk as usize,
                                );
                                for ci in 0..kernel.c_in {
                                    let x = self.data[src + ci];
                                    if x == 0.0 {
                                        continue;
                                    }
                                    let wrow = wbase + ci * kernel.c_out;
                                    for co in 0..kernel.c_out {
                                        out.data[base + co] +=
                                            x * kernel.weights[wrow + co];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Weights of a `k x k x k` convolution, laid out as
/// `weights[(((di * k + dj) * k + dk) * c_in + ci) * c_out + co]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dKernel {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f32>,
}

impl Conv3dKernel {
    pub fn new(k: usize, c_in: usize, c_out: usize, weights: Vec<f32>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv3d kernel size {k} must be odd")));
        }
        let expected = k * k * k * c_in * c_out;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "conv3d kernel: {} weights given, {} expected",
                weights.len(),
                expected
            )));
        }
        Ok(Conv3dKernel {
            k,
            c_in,
            c_out,
            weights,
        })
    }

    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        Conv3dKernel {
            k,
            c_in,
            c_out,
            weights: vec![0.0; k * k * k * c_in * c_out],
        }
    }

    #[inline]
    fn tap_index(&self, di: usize, dj: usize, dk: usize) -> usize {
        (((di * self.k + dj) * self.k + dk) * self.c_in) * self.c_out
    }
}

/// Binary `w x h x d` occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub grid: GridSpec,
    pub data: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(grid: GridSpec) -> Self {
        OccupancyGrid {
            grid,
            data: vec![0; grid.voxel_count()],
        }
    }

    pub fn filled(grid: GridSpec) -> Self {
        OccupancyGrid {
            grid,
            data: vec![1; grid.voxel_count()],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.grid.h + j) * self.grid.d + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.index(i, j, k)] != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, occupied: bool) {
        let idx = self.index(i, j, k);
        self.data[idx] = occupied as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    /// View as a 1-channel float volume (1.0 where occupied).
    pub fn to_volume(&self) -> FeatureVolume {
        let mut out = FeatureVolume::zeros(self.grid, 1);
        for (dst, src) in out.data.iter_mut().zip(&self.data) {
            *dst = *src as f32;
        }
        out
    }
}
