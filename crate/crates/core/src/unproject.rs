//! Lifting 2D images and depth maps into camera-aligned feature
//! volumes.
//!
//! The unprojection grid is aligned with the camera of the view being
//! lifted: its k axis runs along the optical axis and its center sits
//! at `grid.center_distance` in front of the camera. Stabilization to
//! the memory frame is a separate rotation step.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, GridSpec};
use crate::image::{DepthMap, Image};
use crate::volume::{FeatureVolume, OccupancyGrid};

/// Fill every voxel with the bilinearly sampled image value at the
/// pixel its center projects to. Voxels behind the camera or
/// projecting outside the image stay zero.
pub fn unproject_image(image: &Image, intr: &CameraIntrinsics, grid: &GridSpec) -> FeatureVolume {
    let mut out = FeatureVolume::zeros(*grid, image.channels);
    let mut sample = vec![0.0f32; image.channels];
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = grid.voxel_center_camera(i, j, k);
                if p.z <= 0.0 {
                    continue;
                }
                let x = intr.f * p.x / p.z + intr.cx;
                let y = intr.f * p.y / p.z + intr.cy;
                image.sample_bilinear(x, y, &mut sample);
                let base = out.index(i, j, k, 0);
                out.data[base..base + image.channels].copy_from_slice(&sample);
            }
        }
    }
    out
}

/// Depth shell: a voxel is occupied iff it projects inside the image
/// and its camera-frame depth matches the (bilinearly sampled) depth
/// map within half the voxel pitch along the optical axis. Pixels that
/// straddle a depth discontinuity wider than two voxels interpolate a
/// surface that does not exist and contribute nothing.
pub fn unproject_depth(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    grid: &GridSpec,
) -> OccupancyGrid {
    let mut out = OccupancyGrid::empty(*grid);
    let half_band = grid.pitch().z / 2.0;
    let max_spread = (grid.pitch().z * 2.0) as f32;
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = grid.voxel_center_camera(i, j, k);
                if p.z <= 0.0 {
                    continue;
                }
                let x = intr.f * p.x / p.z + intr.cx;
                let y = intr.f * p.y / p.z + intr.cy;
                if x < 0.0
                    || y < 0.0
                    || x > (intr.width - 1) as f64
                    || y > (intr.height - 1) as f64
                {
                    continue;
                }
                let d = depth.sample_surface(x, y, max_spread);
                if d.is_finite() && (p.z - d as f64).abs() <= half_band {
                    out.set(i, j, k, true);
                }
            }
        }
    }
    out
}

/// Multiply every feature channel elementwise by the binary shell.
pub fn mask_volume(features: &FeatureVolume, shell: &OccupancyGrid) -> Result<FeatureVolume> {
    if features.grid.w != shell.grid.w
        || features.grid.h != shell.grid.h
        || features.grid.d != shell.grid.d
    {
        return Err(Error::shape(format!(
            "mask_volume: features {}x{}x{} vs shell {}x{}x{}",
            features.grid.w,
            features.grid.h,
            features.grid.d,
            shell.grid.w,
            shell.grid.h,
            shell.grid.d
        )));
    }
    let mut out = features.clone();
    for (voxel, occ) in out.data.chunks_exact_mut(out.channels).zip(&shell.data) {
        if *occ == 0 {
            voxel.fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::centered(55.0, 64, 64)
    }

    fn test_grid() -> GridSpec {
        GridSpec::default()
    }

    /// Brute-force in-frustum check used as the independent oracle:
    /// projects a voxel center with the raw formulas, no shared code
    /// with the implementation's inner loop beyond `project_point`.
    fn oracle_pixel(
        grid: &GridSpec,
        intr: &CameraIntrinsics,
        i: usize,
        j: usize,
        k: usize,
    ) -> Option<(f64, f64)> {
        let pitch = grid.side / grid.w as f64;
        let c = (grid.w as f64 - 1.0) / 2.0;
        let px = (i as f64 - c) * pitch;
        let py = (j as f64 - c) * pitch;
        let pz = grid.center_distance + (k as f64 - c) * pitch;
        if pz <= 0.0 {
            return None;
        }
        let (x, y) = project_point(nalgebra::Vector3::new(px, py, pz), intr).ok()?;
        if x < 0.0 || y < 0.0 || x > (intr.width - 1) as f64 || y > (intr.height - 1) as f64 {
            return None;
        }
        Some((x, y))
    }

    #[test]
    fn constant_image_fills_frustum_voxels() {
        let intr = test_intrinsics();
        let grid = test_grid();
        let img = Image::constant(64, 64, &[0.7]);
        let vol = unproject_image(&img, &intr, &grid);
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    let v = vol.at(i, j, k, 0);
                    match oracle_pixel(&grid, &intr, i, j, k) {
                        Some(_) => assert!(
                            (v - 0.7).abs() < 1e-5,
                            "voxel ({i},{j},{k}) carries {v}"
                        ),
                        None => assert_eq!(v, 0.0, "voxel ({i},{j},{k})"),
                    }
                }
            }
        }
        // Sanity: the frustum covers a nontrivial part of the grid.
        let filled = vol.data.iter().filter(|v| **v != 0.0).count();
        assert!(filled > grid.voxel_count() / 4);
    }

    #[test]
    fn ray_voxels_carry_the_same_feature() {
        let intr = test_intrinsics();
        let grid = test_grid();
        // Piecewise-constant image: broad blocks of distinct values.
        let mut img = Image::zeros(64, 64, 1);
        for y in 0..64 {
            for x in 0..64 {
                img.pixel_mut(x, y)[0] = ((x / 16) * 4 + y / 16) as f32 / 16.0;
            }
        }
        let vol = unproject_image(&img, &intr, &grid);
        // Walk the interior stretch of the ray from the camera center
        // through an in-frustum voxel center; the lifted volume carries
        // (nearly) the same value all along it when the image is
        // locally constant around the hit pixel.
        let (i, j, k) = (20, 14, 16);
        let p = grid.voxel_center_camera(i, j, k);
        let dir = p / p.norm();
        let reference = vol.at(i, j, k, 0);
        assert!(reference > 0.0);
        let mut sample = [0.0f32];
        let mut checked = 0;
        for step in 0..=50 {
            let t = 3.6 + step as f64 * 0.02;
            let idx = grid.camera_to_index(dir * t);
            vol.sample_trilinear(idx.x, idx.y, idx.z, &mut sample);
            assert!(
                (sample[0] - reference).abs() < 1e-4,
                "ray point at t={t}: {} vs {reference}",
                sample[0]
            );
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn one_hot_pixel_forms_a_ray_cone() {
        let intr = test_intrinsics();
        let grid = test_grid();
        let mut img = Image::zeros(64, 64, 1);
        img.pixel_mut(40, 25)[0] = 1.0;
        let vol = unproject_image(&img, &intr, &grid);
        // Oracle: a voxel is nonzero iff its center projects within the
        // bilinear footprint of pixel (40, 25).
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    let v = vol.at(i, j, k, 0);
                    match oracle_pixel(&grid, &intr, i, j, k) {
                        Some((x, y)) => {
                            let inside =
                                (x - 40.0).abs() < 1.0 && (y - 25.0).abs() < 1.0;
                            assert_eq!(
                                v != 0.0,
                                inside,
                                "voxel ({i},{j},{k}) projects to ({x:.2},{y:.2})"
                            );
                        }
                        None => assert_eq!(v, 0.0),
                    }
                }
            }
        }
    }

    #[test]
    fn unproject_image_is_linear() {
        let intr = test_intrinsics();
        let grid = GridSpec::cubic(16, 4.0, 4.0);
        let mut a = Image::zeros(64, 64, 2);
        let mut b = Image::zeros(64, 64, 2);
        for (n, v) in a.data.iter_mut().enumerate() {
            *v = ((n * 17) % 29) as f32 / 29.0;
        }
        for (n, v) in b.data.iter_mut().enumerate() {
            *v = ((n * 5) % 31) as f32 / 31.0;
        }
        let mut combo = Image::zeros(64, 64, 2);
        for ((c, x), y) in combo.data.iter_mut().zip(&a.data).zip(&b.data) {
            *c = 0.6 * x + 1.5 * y;
        }
        let lhs = unproject_image(&combo, &intr, &grid);
        let ua = unproject_image(&a, &intr, &grid).scale(0.6);
        let ub = unproject_image(&b, &intr, &grid).scale(1.5);
        let rhs = ua.add(&ub).unwrap();
        for (x, y) in lhs.data.iter().zip(&rhs.data) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_depth_between_slabs_occupies_one_slab() {
        let intr = test_intrinsics();
        let grid = test_grid();
        // Slab centers sit at z = 4.0 + (k - 15.5) * 0.125; choose a
        // depth equal to the k = 16 slab center.
        let depth_value = grid.voxel_center_camera(0, 0, 16).z as f32;
        let depth = DepthMap::filled(64, 64, depth_value);
        let shell = unproject_depth(&depth, &intr, &grid);
        assert!(shell.count() > 0);
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    if shell.at(i, j, k) {
                        assert_eq!(k, 16, "occupied voxel in slab {k}");
                    }
                }
            }
        }
        // All in-frustum voxels of slab 16 are occupied.
        for i in 0..grid.w {
            for j in 0..grid.h {
                if oracle_pixel(&grid, &intr, i, j, 16).is_some() {
                    assert!(shell.at(i, j, 16));
                }
            }
        }
    }

    #[test]
    fn depth_beyond_far_face_gives_empty_shell() {
        let intr = test_intrinsics();
        let grid = test_grid();
        let depth = DepthMap::filled(64, 64, 100.0);
        assert_eq!(unproject_depth(&depth, &intr, &grid).count(), 0);
        let depth = DepthMap::filled(64, 64, f32::INFINITY);
        assert_eq!(unproject_depth(&depth, &intr, &grid).count(), 0);
    }

    #[test]
    fn occupied_set_is_subset_of_frustum() {
        let intr = test_intrinsics();
        let grid = test_grid();
        let mut depth = DepthMap::filled(64, 64, f32::INFINITY);
        for y in 20..44 {
            for x in 20..44 {
                depth.set(x, y, 3.8 + 0.01 * (x + y) as f32);
            }
        }
        let shell = unproject_depth(&depth, &intr, &grid);
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    if shell.at(i, j, k) {
                        assert!(oracle_pixel(&grid, &intr, i, j, k).is_some());
                    }
                }
            }
        }
    }

    #[test]
    fn mask_volume_examples() {
        let grid = GridSpec::cubic(8, 1.0, 1.0);
        let mut features = FeatureVolume::zeros(grid, 3);
        for (n, v) in features.data.iter_mut().enumerate() {
            *v = (n % 11) as f32 + 1.0;
        }
        let all = OccupancyGrid::filled(grid);
        assert_eq!(mask_volume(&features, &all).unwrap().data, features.data);

        let none = OccupancyGrid::empty(grid);
        assert!(mask_volume(&features, &none)
            .unwrap()
            .data
            .iter()
            .all(|v| *v == 0.0));

        let mut one = OccupancyGrid::empty(grid);
        one.set(2, 3, 4, true);
        let masked = mask_volume(&features, &one).unwrap();
        let nonzero = masked.data.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 3);
        assert_eq!(masked.at(2, 3, 4, 1), features.at(2, 3, 4, 1));
    }

    #[test]
    fn masking_is_idempotent() {
        let grid = GridSpec::cubic(8, 1.0, 1.0);
        let mut features = FeatureVolume::zeros(grid, 2);
        for (n, v) in features.data.iter_mut().enumerate() {
            *v = (n % 5) as f32;
        }
        let mut shell = OccupancyGrid::empty(grid);
        for n in 0..shell.data.len() {
            shell.data[n] = (n % 3 == 0) as u8;
        }
        let once = mask_volume(&features, &shell).unwrap();
        let twice = mask_volume(&once, &shell).unwrap();
        assert_eq!(once.data, twice.data);
    }
}
