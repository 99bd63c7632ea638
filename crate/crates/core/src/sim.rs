//! Synthetic scene generation, analytic ray-cast rendering and
//! voxelization: the ground-truth source for the rest of the pipeline.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{pose_to_camera_transform, CameraIntrinsics, GridSpec, Pose};
use crate::image::{DepthMap, Image};
use crate::volume::OccupancyGrid;

/// A colored geometric primitive with an instance id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Box {
        center: [f64; 3],
        size: [f64; 3],
        color: [f32; 3],
        id: u32,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f32; 3],
        id: u32,
    },
    /// Chain of equal-size cubes on a lattice (Shepard-Metzler style):
    /// cube n sits at `center + offsets[n] * size`.
    CubeChain {
        center: [f64; 3],
        size: f64,
        offsets: Vec<[i32; 3]>,
        colors: Vec<[f32; 3]>,
        id: u32,
    },
}

impl Primitive {
    pub fn id(&self) -> u32 {
        match self {
            Primitive::Box { id, .. }
            | Primitive::Sphere { id, .. }
            | Primitive::CubeChain { id, .. } => *id,
        }
    }

    /// Tight axis-aligned bounds.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Primitive::Box { center, size, .. } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::from_column_slice(size) / 2.0;
                (c - half, c + half)
            }
            Primitive::Sphere { center, radius, .. } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::repeat(*radius);
                (c - half, c + half)
            }
            Primitive::CubeChain {
                center,
                size,
                offsets,
                ..
            } => {
                let c = Vector3::from_column_slice(center);
                let mut lo = Vector3::repeat(f64::INFINITY);
                let mut hi = Vector3::repeat(f64::NEG_INFINITY);
                for off in offsets {
                    let cube = c + Vector3::new(
                        off[0] as f64 * size,
                        off[1] as f64 * size,
                        off[2] as f64 * size,
                    );
                    lo = lo.inf(&(cube - Vector3::repeat(size / 2.0)));
                    hi = hi.sup(&(cube + Vector3::repeat(size / 2.0)));
                }
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, p: Vector3<f64>) -> bool {
        match self {
            Primitive::Box { center, size, .. } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::from_column_slice(size) / 2.0;
                (p - c).abs() <= half
            }
            Primitive::Sphere { center, radius, .. } => {
                (p - Vector3::from_column_slice(center)).norm() <= *radius
            }
            Primitive::CubeChain {
                center,
                size,
                offsets,
                ..
            } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::repeat(size / 2.0);
                offsets.iter().any(|off| {
                    let cube = c + Vector3::new(
                        off[0] as f64 * size,
                        off[1] as f64 * size,
                        off[2] as f64 * size,
                    );
                    (p - cube).abs() <= half
                })
            }
        }
    }
}

/// A generated scene: primitives with unique instance ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<Primitive>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_height: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneStyle {
    /// Non-overlapping primitives resting on the table plane.
    Arrangement,
    /// A self-avoiding chain of seven colored cubes.
    ShepardMetzler,
}

const PLACEMENT_TRIES: usize = 1000;
const TABLE_HEIGHT: f64 = -1.0;
const CHAIN_CUBES: usize = 7;
const CHAIN_CUBE_SIZE: f64 = 0.4;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-object RNG stream split from the scene seed.
fn object_stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index.wrapping_add(1))))
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        rng.random_range(0.25..1.0f32),
        rng.random_range(0.25..1.0f32),
        rng.random_range(0.25..1.0f32),
    ]
}

/// Deterministic scene generation. Arrangement scenes place
/// non-overlapping boxes and spheres on the table plane; the
/// Shepard-Metzler style builds one chain of seven face-adjacent cubes.
pub fn generate_scene(seed: u64, n_objects: usize, style: SceneStyle) -> Result<Scene> {
    assert!(n_objects >= 1, "scenes need at least one object");
    match style {
        SceneStyle::Arrangement => generate_arrangement(seed, n_objects),
        SceneStyle::ShepardMetzler => generate_chain(seed),
    }
}

fn generate_arrangement(seed: u64, n_objects: usize) -> Result<Scene> {
    // Horizontal reach keeps every object corner inside the ball
    // inscribed in the (arbitrarily rotated) camera grids.
    const REACH: f64 = 1.2;
    const GAP: f64 = 0.45;
    const ATTEMPTS: usize = 50;
    const TRIES_PER_OBJECT: usize = PLACEMENT_TRIES / ATTEMPTS;
    for attempt in 0..ATTEMPTS as u64 {
        let mut objects: Vec<Primitive> = Vec::with_capacity(n_objects);
        let mut placed: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
        'objects: for index in 0..n_objects {
            let mut rng = object_stream(seed ^ splitmix64(attempt), index as u64);
            for _ in 0..TRIES_PER_OBJECT {
                let color = random_color(&mut rng);
                let is_sphere = rng.random_range(0..2u32) == 1;
                let (half, primitive_of) = if is_sphere {
                    let radius = rng.random_range(0.32..0.48);
                    let half = Vector3::repeat(radius);
                    let f: std::boxed::Box<dyn Fn(Vector3<f64>) -> Primitive> =
                        std::boxed::Box::new(move |c: Vector3<f64>| Primitive::Sphere {
                            center: [c.x, c.y, c.z],
                            radius,
                            color,
                            id: index as u32 + 1,
                        });
                    (half, f)
                } else {
                    let size = Vector3::new(
                        rng.random_range(0.5..0.95),
                        rng.random_range(0.5..0.95),
                        rng.random_range(0.5..0.95),
                    );
                    let half = size / 2.0;
                    let f: std::boxed::Box<dyn Fn(Vector3<f64>) -> Primitive> =
                        std::boxed::Box::new(move |c: Vector3<f64>| Primitive::Box {
                            center: [c.x, c.y, c.z],
                            size: [size.x, size.y, size.z],
                            color,
                            id: index as u32 + 1,
                        });
                    (half, f)
                };
                let center = Vector3::new(
                    rng.random_range(-(REACH - half.x)..REACH - half.x),
                    TABLE_HEIGHT + half.y,
                    rng.random_range(-(REACH - half.z)..REACH - half.z),
                );
                let lo = center - half;
                let hi = center + half;
                let overlaps = placed.iter().any(|(plo, phi)| {
                    lo.x - GAP < phi.x
                        && hi.x + GAP > plo.x
                        && lo.y - GAP < phi.y
                        && hi.y + GAP > plo.y
                        && lo.z - GAP < phi.z
                        && hi.z + GAP > plo.z
                });
                if !overlaps {
                    placed.push((lo, hi));
                    objects.push(primitive_of(center));
                    continue 'objects;
                }
            }
            // This attempt wedged itself; try a fresh layout.
            break;
        }
        if objects.len() == n_objects {
            return Ok(Scene {
                objects,
                seed,
                table_height: Some(TABLE_HEIGHT),
            });
        }
    }
    Err(Error::Placement {
        tries: PLACEMENT_TRIES,
    })
}

fn generate_chain(seed: u64) -> Result<Scene> {
    let mut rng = object_stream(seed, 0);
    const DIRS: [[i32; 3]; 6] = [
        [1, 0, 0],
        [-1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
    ];
    for _ in 0..PLACEMENT_TRIES {
        let mut offsets: Vec<[i32; 3]> = vec![[0, 0, 0]];
        while offsets.len() < CHAIN_CUBES {
            let last = *offsets.last().unwrap();
            let mut open: Vec<[i32; 3]> = DIRS
                .iter()
                .map(|d| [last[0] + d[0], last[1] + d[1], last[2] + d[2]])
                .filter(|c| !offsets.contains(c))
                .collect();
            if open.is_empty() {
                break;
            }
            let pick = rng.random_range(0..open.len());
            offsets.push(open.swap_remove(pick));
        }
        if offsets.len() != CHAIN_CUBES {
            continue;
        }
        // Recenter on the chain's bounding-box middle so it sits at
        // the grid center.
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for o in &offsets {
            for a in 0..3 {
                lo[a] = lo[a].min(o[a]);
                hi[a] = hi[a].max(o[a]);
            }
        }
        let mid = [
            (lo[0] + hi[0]) as f64 / 2.0,
            (lo[1] + hi[1]) as f64 / 2.0,
            (lo[2] + hi[2]) as f64 / 2.0,
        ];
        let colors = (0..CHAIN_CUBES).map(|_| random_color(&mut rng)).collect();
        return Ok(Scene {
            objects: vec![Primitive::CubeChain {
                center: [
                    -mid[0] * CHAIN_CUBE_SIZE,
                    -mid[1] * CHAIN_CUBE_SIZE,
                    -mid[2] * CHAIN_CUBE_SIZE,
                ],
                size: CHAIN_CUBE_SIZE,
                offsets,
                colors,
                id: 1,
            }],
            seed,
            table_height: None,
        });
    }
    Err(Error::Placement {
        tries: PLACEMENT_TRIES,
    })
}

/// One ray-primitive hit.
#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    normal: Vector3<f64>,
    color: [f32; 3],
}

fn ray_sphere(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    center: Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(&dir);
    let disc = b * b - (oc.norm_squared() - radius * radius);
    if disc < 0.0 {
        return None;
    }
    let sqrt = disc.sqrt();
    let t = -b - sqrt;
    if t > 1e-9 {
        Some(t)
    } else {
        let t = -b + sqrt;
        (t > 1e-9).then_some(t)
    }
}

fn ray_aabb(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
) -> Option<(f64, Vector3<f64>)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = {
            let t0 = (lo[a] - origin[a]) * inv;
            let t1 = (hi[a] - origin[a]) * inv;
            if t0 <= t1 {
                (t0, t1)
            } else {
                (t1, t0)
            }
        };
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = a;
        }
        t_exit = t_exit.min(t1);
        if t_exit < t_enter {
            return None;
        }
    }
    if t_enter > 1e-9 {
        let mut normal = Vector3::zeros();
        normal[enter_axis] = -dir[enter_axis].signum();
        Some((t_enter, normal))
    } else {
        None
    }
}

fn cast(scene: &Scene, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |hit: Hit| {
        if best.map_or(true, |b| hit.t < b.t) {
            best = Some(hit);
        }
    };
    for obj in &scene.objects {
        match obj {
            Primitive::Sphere {
                center,
                radius,
                color,
                id: _,
            } => {
                let c = Vector3::from_column_slice(center);
                if let Some(t) = ray_sphere(origin, dir, c, *radius) {
                    consider(Hit {
                        t,
                        normal: (origin + dir * t - c) / *radius,
                        color: *color,
                    });
                }
            }
            Primitive::Box {
                center,
                size,
                color,
                id: _,
            } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::from_column_slice(size) / 2.0;
                if let Some((t, normal)) = ray_aabb(origin, dir, c - half, c + half) {
                    consider(Hit {
                        t,
                        normal,
                        color: *color,
                    });
                }
            }
            Primitive::CubeChain {
                center,
                size,
                offsets,
                colors,
                id: _,
            } => {
                let c = Vector3::from_column_slice(center);
                let half = Vector3::repeat(size / 2.0);
                for (off, color) in offsets.iter().zip(colors) {
                    let cube = c + Vector3::new(
                        off[0] as f64 * size,
                        off[1] as f64 * size,
                        off[2] as f64 * size,
                    );
                    if let Some((t, normal)) = ray_aabb(origin, dir, cube - half, cube + half) {
                        consider(Hit {
                            t,
                            normal,
                            color: *color,
                        });
                    }
                }
            }
        }
    }
    best
}

/// Per-pixel camera rays for a pose; returns (origin, unit direction,
/// inverse norm of the unnormalized camera-frame direction).
fn pixel_ray(
    pose_transform: &crate::geometry::CameraTransform,
    intr: &CameraIntrinsics,
    x: usize,
    y: usize,
) -> (Vector3<f64>, Vector3<f64>, f64) {
    let dir_cam = Vector3::new(
        (x as f64 - intr.cx) / intr.f,
        (y as f64 - intr.cy) / intr.f,
        1.0,
    );
    let norm = dir_cam.norm();
    let dir_world = pose_transform.rotation.transpose() * (dir_cam / norm);
    (pose_transform.center(), dir_world, 1.0 / norm)
}

/// Ray-cast depth map: camera-frame z of the nearest hit, infinity for
/// misses.
pub fn render_depth(scene: &Scene, pose: &Pose, intr: &CameraIntrinsics) -> DepthMap {
    let t = pose_to_camera_transform(pose);
    let mut depth = DepthMap::filled(intr.width, intr.height, f32::INFINITY);
    let width = intr.width;
    depth
        .data
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let (origin, dir, z_per_t) = pixel_ray(&t, intr, x, y);
                if let Some(hit) = cast(scene, origin, dir) {
                    *out = (hit.t * z_per_t) as f32;
                }
            }
        });
    depth
}

/// Ray-cast RGB render: flat shading, the hit object's color modulated
/// by |cos| of the angle between surface normal and ray. Misses are
/// black.
pub fn render_rgb(scene: &Scene, pose: &Pose, intr: &CameraIntrinsics) -> Image {
    let t = pose_to_camera_transform(pose);
    let mut img = Image::zeros(intr.width, intr.height, 3);
    let width = intr.width;
    img.data
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width {
                let (origin, dir, _) = pixel_ray(&t, intr, x, y);
                if let Some(hit) = cast(scene, origin, dir) {
                    let shade = hit.normal.dot(&dir).abs() as f32;
                    let px = &mut row[x * 3..x * 3 + 3];
                    px[0] = hit.color[0] * shade;
                    px[1] = hit.color[1] * shade;
                    px[2] = hit.color[2] * shade;
                }
            }
        });
    img
}

/// Voxelize into the world-aligned grid centered at the origin: a voxel
/// is occupied iff its center lies inside any primitive; the label grid
/// holds the lowest owning instance id (0 = empty).
pub fn voxelize(scene: &Scene, grid: &GridSpec) -> (OccupancyGrid, Vec<u32>) {
    let centers = |i: usize, j: usize, k: usize| {
        crate::detection::world_voxel_center(grid, i, j, k)
    };
    voxelize_with(scene, grid, centers)
}

/// Voxelize into the camera-aligned grid of a pose (k axis along the
/// optical axis, center at `center_distance`).
pub fn voxelize_in_camera_frame(
    scene: &Scene,
    grid: &GridSpec,
    pose: &Pose,
) -> (OccupancyGrid, Vec<u32>) {
    let t = pose_to_camera_transform(pose);
    let centers = move |i: usize, j: usize, k: usize| {
        t.to_world(grid.voxel_center_camera(i, j, k))
    };
    voxelize_with(scene, grid, centers)
}

fn voxelize_with<F>(scene: &Scene, grid: &GridSpec, centers: F) -> (OccupancyGrid, Vec<u32>)
where
    F: Fn(usize, usize, usize) -> Vector3<f64>,
{
    let mut occ = OccupancyGrid::empty(*grid);
    let mut labels = vec![0u32; grid.voxel_count()];
    let mut by_id: Vec<&Primitive> = scene.objects.iter().collect();
    by_id.sort_by_key(|p| p.id());
    let mut n = 0;
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = centers(i, j, k);
                for obj in &by_id {
                    if obj.contains(p) {
                        occ.data[n] = 1;
                        labels[n] = obj.id();
                        break;
                    }
                }
                n += 1;
            }
        }
    }
    (occ, labels)
}

/// Tight ground-truth boxes, one per primitive, score 1.
pub fn ground_truth_boxes(scene: &Scene) -> Vec<Box3D> {
    scene
        .objects
        .iter()
        .map(|obj| {
            let (lo, hi) = obj.bounds();
            let mut b = Box3D::new((lo + hi) / 2.0, hi - lo, 1.0);
            b.instance_id = Some(obj.id());
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(55.0, 64, 64)
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(7, 2, SceneStyle::Arrangement).unwrap();
        let b = generate_scene(7, 2, SceneStyle::Arrangement).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_scene(8, 2, SceneStyle::Arrangement).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn arrangement_objects_do_not_overlap() {
        for seed in 0..20 {
            let scene = generate_scene(seed, 2, SceneStyle::Arrangement).unwrap();
            let boxes = ground_truth_boxes(&scene);
            assert_eq!(boxes.len(), 2);
            assert_eq!(crate::detection::iou3d(&boxes[0], &boxes[1]), 0.0);
        }
    }

    #[test]
    fn arrangement_fits_in_grid_extent() {
        for seed in 0..50 {
            let scene = generate_scene(seed, 2, SceneStyle::Arrangement).unwrap();
            for b in ground_truth_boxes(&scene) {
                assert!(b.min().amax() <= 2.0 && b.max().amax() <= 2.0, "seed {seed}");
            }
        }
    }

    #[test]
    fn chain_has_seven_adjacent_cubes() {
        for seed in 0..20 {
            let scene = generate_scene(seed, 1, SceneStyle::ShepardMetzler).unwrap();
            match &scene.objects[0] {
                Primitive::CubeChain {
                    offsets, colors, ..
                } => {
                    assert_eq!(offsets.len(), 7);
                    assert_eq!(colors.len(), 7);
                    // Each cube face-adjacent to the previous one.
                    for pair in offsets.windows(2) {
                        let dist: i32 = (0..3)
                            .map(|a| (pair[0][a] - pair[1][a]).abs())
                            .sum();
                        assert_eq!(dist, 1, "seed {seed}: chain breaks");
                    }
                    // Self-avoiding.
                    for (n, o) in offsets.iter().enumerate() {
                        assert!(!offsets[n + 1..].contains(o));
                    }
                }
                other => panic!("expected a cube chain, got {other:?}"),
            }
        }
    }

    #[test]
    fn on_axis_sphere_depth() {
        // 65x65 intrinsics put a pixel exactly on the optical axis.
        let intr = CameraIntrinsics::centered(55.0, 65, 65);
        let scene = Scene {
            objects: vec![Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.5,
                color: [1.0, 0.0, 0.0],
                id: 1,
            }],
            seed: 0,
            table_height: None,
        };
        let depth = render_depth(&scene, &Pose::new(0.0, 0.0, 4.0), &intr);
        assert!((depth.at(32, 32) - 3.5).abs() < 1e-5);
    }

    #[test]
    fn empty_scene_renders_infinite_depth_and_black() {
        let scene = Scene {
            objects: vec![],
            seed: 0,
            table_height: None,
        };
        let pose = Pose::new(40.0, 20.0, 4.0);
        let depth = render_depth(&scene, &pose, &intr());
        assert!(depth.data.iter().all(|d| !d.is_finite()));
        let rgb = render_rgb(&scene, &pose, &intr());
        assert!(rgb.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn depth_is_invariant_under_color_relabeling() {
        let mut scene = generate_scene(3, 2, SceneStyle::Arrangement).unwrap();
        let pose = Pose::new(60.0, 40.0, 4.0);
        let before = render_depth(&scene, &pose, &intr());
        for obj in &mut scene.objects {
            match obj {
                Primitive::Box { color, .. } | Primitive::Sphere { color, .. } => {
                    *color = [0.1, 0.9, 0.5];
                }
                Primitive::CubeChain { colors, .. } => {
                    for c in colors {
                        *c = [0.5, 0.5, 0.5];
                    }
                }
            }
        }
        let after = render_depth(&scene, &pose, &intr());
        assert_eq!(before.data, after.data);
    }

    #[test]
    fn full_turn_renders_identically() {
        let scene = generate_scene(5, 2, SceneStyle::Arrangement).unwrap();
        let a = render_rgb(&scene, &Pose::new(20.0, 40.0, 4.0), &intr());
        let b = render_rgb(&scene, &Pose::new(380.0, 40.0, 4.0), &intr());
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn voxelize_grid_aligned_cube() {
        // A cube of side 1.0 centered at the origin covers exactly 8^3
        // voxel centers of the default 32-cell, side-4 grid.
        let grid = GridSpec::default();
        let scene = Scene {
            objects: vec![Primitive::Box {
                center: [0.0, 0.0, 0.0],
                size: [1.0, 1.0, 1.0],
                color: [1.0, 1.0, 1.0],
                id: 1,
            }],
            seed: 0,
            table_height: None,
        };
        let (occ, labels) = voxelize(&scene, &grid);
        assert_eq!(occ.count(), 512);
        assert_eq!(labels.iter().filter(|l| **l == 1).count(), 512);
    }

    #[test]
    fn voxelize_empty_scene() {
        let scene = Scene {
            objects: vec![],
            seed: 0,
            table_height: None,
        };
        let (occ, _) = voxelize(&scene, &GridSpec::default());
        assert_eq!(occ.count(), 0);
    }

    #[test]
    fn voxelize_sphere_volume_estimate() {
        let grid = GridSpec::default();
        let radius = 0.5; // 4 voxels at pitch 0.125
        let scene = Scene {
            objects: vec![Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius,
                color: [1.0, 1.0, 1.0],
                id: 1,
            }],
            seed: 0,
            table_height: None,
        };
        let (occ, _) = voxelize(&scene, &grid);
        let voxel_volume = grid.pitch().x * grid.pitch().y * grid.pitch().z;
        let expected = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3) / voxel_volume;
        let rel = (occ.count() as f64 - expected).abs() / expected;
        assert!(rel < 0.05, "sphere fill deviates {rel}");
    }

    #[test]
    fn ground_truth_box_examples() {
        let scene = Scene {
            objects: vec![
                Primitive::Box {
                    center: [0.0, 0.0, 0.0],
                    size: [1.0, 1.0, 1.0],
                    color: [1.0, 0.0, 0.0],
                    id: 1,
                },
                Primitive::Sphere {
                    center: [1.0, 0.5, -0.5],
                    radius: 0.3,
                    color: [0.0, 1.0, 0.0],
                    id: 2,
                },
            ],
            seed: 0,
            table_height: None,
        };
        let boxes = ground_truth_boxes(&scene);
        assert_eq!(boxes[0].center, Vector3::zeros());
        assert_eq!(boxes[0].dims, Vector3::new(1.0, 1.0, 1.0));
        assert!((boxes[1].dims - Vector3::new(0.6, 0.6, 0.6)).norm() < 1e-12);
        assert_eq!(boxes[1].instance_id, Some(2));

        let chain = generate_scene(2, 1, SceneStyle::ShepardMetzler).unwrap();
        let chain_boxes = ground_truth_boxes(&chain);
        assert_eq!(chain_boxes.len(), 1);
        let (lo, hi) = chain.objects[0].bounds();
        assert_eq!(chain_boxes[0].min(), lo);
        assert_eq!(chain_boxes[0].max(), hi);
    }

    #[test]
    fn renderer_and_voxelizer_agree_on_the_surface() {
        // Every voxel of the depth-unprojected shell lies within one
        // voxel diagonal of an occupied voxel of the voxelization.
        let grid = GridSpec::default();
        let scene = generate_scene(11, 2, SceneStyle::Arrangement).unwrap();
        let pose = Pose::new(40.0, 20.0, 4.0);
        let depth = render_depth(&scene, &pose, &intr());
        let shell = crate::unproject::unproject_depth(&depth, &intr(), &grid);
        let (occ, _) = voxelize_in_camera_frame(&scene, &grid, &pose);
        assert!(shell.count() > 0);
        let diagonal = grid.pitch().norm();
        let pitch = grid.pitch();
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    if !shell.at(i, j, k) {
                        continue;
                    }
                    // Search the 3x3x3 neighborhood for occupied voxels.
                    let mut nearest = f64::INFINITY;
                    for ni in i.saturating_sub(1)..(i + 2).min(grid.w) {
                        for nj in j.saturating_sub(1)..(j + 2).min(grid.h) {
                            for nk in k.saturating_sub(1)..(k + 2).min(grid.d) {
                                if occ.at(ni, nj, nk) {
                                    let dist = Vector3::new(
                                        (ni as f64 - i as f64) * pitch.x,
                                        (nj as f64 - j as f64) * pitch.y,
                                        (nk as f64 - k as f64) * pitch.z,
                                    )
                                    .norm();
                                    nearest = nearest.min(dist);
                                }
                            }
                        }
                    }
                    assert!(
                        nearest <= diagonal,
                        "shell voxel ({i},{j},{k}) is {nearest} from the surface"
                    );
                }
            }
        }
    }
}
