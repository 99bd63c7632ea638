//! Camera model, viewing-sphere pose algebra and the rotation
//! conventions shared by every other module.
//!
//! Conventions, fixed once here:
//! - World frame: right-handed, +Y up. The camera orbits the origin on a
//!   sphere of fixed radius and always looks at the origin with zero roll.
//! - Camera frame: x right, y down, z forward (along the optical axis).
//! - Pixel (0, 0) is the center of the top-left pixel; the principal
//!   point defaults to ((width-1)/2, (height-1)/2).
//! - Angles are degrees at every public boundary, radians internally.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn centered(f: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }
}

/// Viewing-sphere camera pose: the camera sits at `radius` from the
/// world origin and looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

impl Pose {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Self {
        Pose {
            azimuth_deg,
            elevation_deg,
            radius,
        }
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        -self.radius * Vector3::new(el.cos() * az.sin(), -el.sin(), el.cos() * az.cos())
    }
}

/// Cubic voxel grid: `w * h * d` voxels spanning a cube of metric side
/// `side`, centered `center_distance` in front of the camera along the
/// optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub w: usize,
    pub h: usize,
    pub d: usize,
    pub side: f64,
    pub center_distance: f64,
}

impl GridSpec {
    pub fn cubic(n: usize, side: f64, center_distance: f64) -> Self {
        GridSpec {
            w: n,
            h: n,
            d: n,
            side,
            center_distance,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.w * self.h * self.d
    }

    /// Metric voxel pitch per axis.
    pub fn pitch(&self) -> Vector3<f64> {
        Vector3::new(
            self.side / self.w as f64,
            self.side / self.h as f64,
            self.side / self.d as f64,
        )
    }

    /// Fractional index of the grid center.
    pub fn center_index(&self) -> Vector3<f64> {
        Vector3::new(
            (self.w as f64 - 1.0) / 2.0,
            (self.h as f64 - 1.0) / 2.0,
            (self.d as f64 - 1.0) / 2.0,
        )
    }

    /// Center of voxel (i, j, k) in the camera frame of the view the
    /// grid is aligned with (k runs along the optical axis).
    pub fn voxel_center_camera(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let p = self.pitch();
        let c = self.center_index();
        Vector3::new(
            (i as f64 - c.x) * p.x,
            (j as f64 - c.y) * p.y,
            self.center_distance + (k as f64 - c.z) * p.z,
        )
    }

    /// Inverse of [`voxel_center_camera`](Self::voxel_center_camera)
    /// for fractional indices.
    pub fn camera_to_index(&self, p: Vector3<f64>) -> Vector3<f64> {
        let pitch = self.pitch();
        let c = self.center_index();
        Vector3::new(
            p.x / pitch.x + c.x,
            p.y / pitch.y + c.y,
            (p.z - self.center_distance) / pitch.z + c.z,
        )
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::cubic(32, 4.0, 4.0)
    }
}

/// Rigid world-to-camera transform: `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraTransform {
    pub fn to_camera(&self, p_world: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    pub fn to_world(&self, p_cam: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Perspective projection of a camera-frame point to sub-pixel
/// coordinates. Fails for points at or behind the camera plane.
pub fn project_point(p: Vector3<f64>, intr: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p.z <= 0.0 {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok((intr.f * p.x / p.z + intr.cx, intr.f * p.y / p.z + intr.cy))
}

/// Look-at transform for a viewing-sphere pose: camera z axis points at
/// the world origin, x axis stays horizontal (zero roll).
pub fn pose_to_camera_transform(pose: &Pose) -> CameraTransform {
    let center = pose.camera_center();
    let forward = (-center).normalize();
    let up = Vector3::y();
    let mut x_axis = forward.cross(&up);
    if x_axis.norm() < 1e-9 {
        // Looking straight up or down; fall back to the world z axis
        // as the roll reference.
        x_axis = forward.cross(&Vector3::z());
    }
    let x_axis = x_axis.normalize();
    let y_axis = forward.cross(&x_axis);
    let rotation = Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        forward.transpose(),
    ]);
    CameraTransform {
        rotation,
        translation: -(rotation * center),
    }
}

/// Wrap an angle in degrees to the interval (-180, 180].
pub fn wrap_angle_deg(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Relative rotation (Δazimuth, Δelevation) carrying pose `b`'s viewing
/// direction onto pose `a`'s. Δazimuth is wrapped to (-180, 180].
pub fn relative_rotation(pose_a: &Pose, pose_b: &Pose) -> (f64, f64) {
    (
        wrap_angle_deg(pose_a.azimuth_deg - pose_b.azimuth_deg),
        pose_a.elevation_deg - pose_b.elevation_deg,
    )
}

/// Grid-frame rotation for a (Δazimuth, Δelevation) pair: yaw about the
/// grid's vertical (j) axis applied first, then pitch about the
/// horizontal (i) axis, both through the grid center.
///
/// The convention is fixed so that for poses `a`, `b` on the viewing
/// sphere, the world-to-camera rotations satisfy
/// `R(a) * R(b)^T == rotation_yaw_pitch(relative_rotation(a, b))`
/// expressed in grid coordinates.
pub fn rotation_yaw_pitch(azimuth_deg: f64, elevation_deg: f64) -> Matrix3<f64> {
    let a = azimuth_deg.to_radians();
    let e = elevation_deg.to_radians();
    let (sa, ca) = a.sin_cos();
    let (se, ce) = e.sin_cos();
    let yaw = Matrix3::new(ca, 0.0, sa, 0.0, 1.0, 0.0, -sa, 0.0, ca);
    let pitch = Matrix3::new(1.0, 0.0, 0.0, 0.0, ce, -se, 0.0, se, ce);
    pitch * yaw
}

/// Bilinear interpolation of a multi-channel 2D field stored row-major
/// as `data[(y * width + x) * channels + ch]`. Coordinates outside
/// `[0, width-1] x [0, height-1]` contribute zero.
pub fn bilinear_sample(
    data: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), channels);
    out.fill(0.0);
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let tx = (x - x0) as f32;
    let ty = (y - y0) as f32;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let w00 = (1.0 - tx) * (1.0 - ty);
    let w10 = tx * (1.0 - ty);
    let w01 = (1.0 - tx) * ty;
    let w11 = tx * ty;
    let idx = |xx: usize, yy: usize| (yy * width + xx) * channels;
    let p00 = idx(x0, y0);
    let p10 = idx(x1, y0);
    let p01 = idx(x0, y1);
    let p11 = idx(x1, y1);
    for ch in 0..channels {
        out[ch] = w00 * data[p00 + ch]
            + w10 * data[p10 + ch]
            + w01 * data[p01 + ch]
            + w11 * data[p11 + ch];
    }
}

/// Trilinear interpolation of a multi-channel 3D field stored as
/// `data[((i * h + j) * d + k) * channels + ch]`. Out-of-bounds
/// coordinates contribute zero.
#[allow(clippy::too_many_arguments)]
pub fn trilinear_sample(
    data: &[f32],
    w: usize,
    h: usize,
    d: usize,
    channels: usize,
    fi: f64,
    fj: f64,
    fk: f64,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), channels);
    out.fill(0.0);
    if fi < 0.0 || fj < 0.0 || fk < 0.0 {
        return;
    }
    if fi > (w - 1) as f64 || fj > (h - 1) as f64 || fk > (d - 1) as f64 {
        return;
    }
    let i0f = fi.floor();
    let j0f = fj.floor();
    let k0f = fk.floor();
    let ti = (fi - i0f) as f32;
    let tj = (fj - j0f) as f32;
    let tk = (fk - k0f) as f32;
    let i0 = i0f as usize;
    let j0 = j0f as usize;
    let k0 = k0f as usize;
    let i1 = (i0 + 1).min(w - 1);
    let j1 = (j0 + 1).min(h - 1);
    let k1 = (k0 + 1).min(d - 1);
    let idx = |i: usize, j: usize, k: usize| ((i * h + j) * d + k) * channels;
    let corners = [
        (idx(i0, j0, k0), (1.0 - ti) * (1.0 - tj) * (1.0 - tk)),
        (idx(i1, j0, k0), ti * (1.0 - tj) * (1.0 - tk)),
        (idx(i0, j1, k0), (1.0 - ti) * tj * (1.0 - tk)),
        (idx(i1, j1, k0), ti * tj * (1.0 - tk)),
        (idx(i0, j0, k1), (1.0 - ti) * (1.0 - tj) * tk),
        (idx(i1, j0, k1), ti * (1.0 - tj) * tk),
        (idx(i0, j1, k1), (1.0 - ti) * tj * tk),
        (idx(i1, j1, k1), ti * tj * tk),
    ];
    for ch in 0..channels {
        let mut acc = 0.0f32;
        for &(base, weight) in &corners {
            acc += weight * data[base + ch];
        }
        out[ch] = acc;
    }
}
