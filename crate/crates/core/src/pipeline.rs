//! End-to-end experiment harness: deterministic view protocols and the
//! render / integrate / detect / predict compositions shared by the CLI
//! and the test suites.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::detection::{nms, propose_from_occupancy, roi_mask, Box3D, Detection, VoxelMask};
use crate::egomotion::{estimate_egomotion, score_rotations};
use crate::error::Result;
use crate::geometry::{relative_rotation, Pose};
use crate::image::{DepthMap, Image};
use crate::memory::{integrate_views, EgoMode, Frame, FusionMode, Integration, MemoryFrame};
use crate::sim::{render_depth, render_rgb, splitmix64, Primitive, Scene};
use crate::volume::FeatureVolume;

/// Deterministic choice of `count` protocol poses for a scene,
/// stratified over azimuth sectors so the views surround the scene
/// instead of clustering on one side.
pub fn scene_view_poses(cfg: &PipelineConfig, scene_seed: u64, count: usize) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(scene_seed ^ 0x5649_4557));
    let steps = (360.0 / cfg.azimuth_step_deg).round() as usize;
    let offset = rng.random_range(0..steps);
    let el_offset = rng.random_range(0..cfg.elevations_deg.len());
    let mut poses: Vec<Pose> = (0..count)
        .map(|n| {
            let sector_lo = n * steps / count;
            let sector_hi = ((n + 1) * steps / count).max(sector_lo + 1);
            let az_idx = (offset + rng.random_range(sector_lo..sector_hi)) % steps;
            // Cycle the elevations so longer sequences see the scene
            // from every height, low views included.
            let el = cfg.elevations_deg[(el_offset + n) % cfg.elevations_deg.len()];
            Pose::new(az_idx as f64 * cfg.azimuth_step_deg, el, cfg.radius)
        })
        .collect();
    poses.shuffle(&mut rng);
    poses
}

/// Render a frame sequence for a scene.
pub fn render_frames(
    scene: &Scene,
    poses: &[Pose],
    cfg: &PipelineConfig,
    with_depth: bool,
) -> Vec<Frame> {
    poses
        .iter()
        .map(|pose| Frame {
            image: render_rgb(scene, pose, &cfg.intrinsics),
            depth: with_depth.then(|| render_depth(scene, pose, &cfg.intrinsics)),
            pose: *pose,
        })
        .collect()
}

/// Render and integrate a scene's views into a memory.
pub fn integrate_scene(
    scene: &Scene,
    poses: &[Pose],
    cfg: &PipelineConfig,
    with_depth: bool,
    fusion: &FusionMode,
    ego: &EgoMode,
) -> Result<Integration> {
    let frames = render_frames(scene, poses, cfg, with_depth);
    integrate_views(&frames, &cfg.intrinsics, &cfg.grid, fusion, ego)
}

/// Detect objects in a memory: propose from occupancy, shrink the
/// fitted boxes by the depth-shell bias (the shell straddles the true
/// surface by about half a voxel per side, and thresholded trilinear
/// resampling widens it further), suppress overlaps, then cut ROI
/// masks.
pub fn detect_objects(
    memory: &FeatureVolume,
    frame: &MemoryFrame,
    cfg: &PipelineConfig,
) -> Vec<Detection> {
    let (_, proposals) = propose_from_occupancy(
        memory,
        frame,
        cfg.propose_threshold,
        cfg.min_voxels,
    );
    let pitch = memory.grid.pitch().x;
    let deflate = cfg.box_deflate_voxels * pitch;
    let deflated: Vec<Box3D> = proposals
        .iter()
        .map(|b| {
            // Shrink where the shell straddles the surface; the bottom
            // face is never observed from the elevated viewing sphere
            // and carries no outward bias, so it stays put.
            let mut out = *b;
            out.dims = Vector3::new(
                (b.dims.x - deflate).max(pitch),
                (b.dims.y - deflate / 2.0).max(pitch),
                (b.dims.z - deflate).max(pitch),
            );
            out.center.y -= deflate / 4.0;
            out
        })
        .collect();
    // Masks are cut from a margin-padded box (the enclosure fill needs
    // the crust layers that box deflation trims away), then clipped
    // back to the reported box so the RLE stays faithful.
    nms(&deflated, cfg.nms_iou)
        .into_iter()
        .map(|bbox| {
            let mut padded = bbox;
            padded.dims += Vector3::repeat(deflate + pitch);
            let mut mask = roi_mask(memory, frame, &padded, cfg.mask_threshold);
            let mut n = 0;
            for i in 0..memory.grid.w {
                for j in 0..memory.grid.h {
                    for k in 0..memory.grid.d {
                        if mask.data[n]
                            && !bbox.contains(crate::detection::world_voxel_center(
                                &memory.grid,
                                i,
                                j,
                                k,
                            ))
                        {
                            mask.data[n] = false;
                        }
                        n += 1;
                    }
                }
            }
            Detection {
                mask: Some(mask),
                bbox,
            }
        })
        .collect()
}

/// Ground-truth detections of a scene: tight boxes and solid
/// per-instance voxel masks on the world grid.
pub fn ground_truth_detections(scene: &Scene, cfg: &PipelineConfig) -> Vec<Detection> {
    let (_, labels) = crate::sim::voxelize(scene, &cfg.grid);
    crate::sim::ground_truth_boxes(scene)
        .into_iter()
        .map(|bbox| {
            let id = bbox.instance_id.expect("simulator boxes carry ids");
            let mut mask = VoxelMask::empty(cfg.grid);
            for (m, l) in mask.data.iter_mut().zip(&labels) {
                *m = *l == id;
            }
            Detection {
                bbox,
                mask: Some(mask),
            }
        })
        .collect()
}

/// Foreground/background and depth agreement between a predicted view
/// and the reference render.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PredictionComparison {
    /// Fraction of pixels whose foreground/background classification
    /// matches the renderer.
    pub fg_agreement: f64,
    /// Among pixels both classify as foreground: fraction with depth
    /// within two voxel pitches.
    pub fg_depth_agreement: f64,
    /// Number of pixels both classify as foreground.
    pub shared_foreground: usize,
    /// PSNR of the RGB prediction against the render, in dB.
    pub psnr: f64,
}

pub fn compare_prediction(
    pred_rgb: &Image,
    pred_depth: &DepthMap,
    gt_rgb: &Image,
    gt_depth: &DepthMap,
    depth_tolerance: f64,
) -> PredictionComparison {
    let total = gt_depth.data.len();
    let mut agree = 0usize;
    let mut shared_fg = 0usize;
    let mut depth_ok = 0usize;
    for (p, g) in pred_depth.data.iter().zip(&gt_depth.data) {
        let (pf, gf) = (p.is_finite(), g.is_finite());
        if pf == gf {
            agree += 1;
        }
        if pf && gf {
            shared_fg += 1;
            if ((*p - *g) as f64).abs() <= depth_tolerance {
                depth_ok += 1;
            }
        }
    }
    let mse = pred_rgb
        .data
        .iter()
        .zip(&gt_rgb.data)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / pred_rgb.data.len() as f64;
    PredictionComparison {
        fg_agreement: agree as f64 / total as f64,
        fg_depth_agreement: if shared_fg == 0 {
            1.0
        } else {
            depth_ok as f64 / shared_fg as f64
        },
        shared_foreground: shared_fg,
        psnr: if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        },
    }
}

/// A constructed occlusion sequence: two spheres and three protocol
/// views. Views 1 and 2 see both objects; in view 3 the larger sphere
/// (id 1) sits on the camera-to-origin axis in front of the smaller one
/// (id 2) and hides it completely.
pub fn occlusion_sequence(seed: u64, cfg: &PipelineConfig) -> (Scene, Vec<Pose>, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x4f43_434c));
    let steps = (360.0 / cfg.azimuth_step_deg).round() as i64;
    let az_idx = rng.random_range(0..steps);
    let az3 = az_idx as f64 * cfg.azimuth_step_deg;
    let el3 = cfg.elevations_deg[rng.random_range(0..cfg.elevations_deg.len())];
    let pose3 = Pose::new(az3, el3, cfg.radius);
    let toward_camera = pose3.camera_center().normalize();
    let d_front = rng.random_range(0.9..1.1);
    let d_back = rng.random_range(0.9..1.1);
    let front = toward_camera * d_front;
    let back = -toward_camera * d_back;
    let scene = Scene {
        objects: vec![
            Primitive::Sphere {
                center: [front.x, front.y, front.z],
                radius: rng.random_range(0.5..0.6),
                color: [0.9, 0.3, 0.2],
                id: 1,
            },
            Primitive::Sphere {
                center: [back.x, back.y, back.z],
                radius: rng.random_range(0.28..0.34),
                color: [0.2, 0.4, 0.9],
                id: 2,
            },
        ],
        seed,
        table_height: None,
    };
    // Side views, +-80 degrees away, see both spheres.
    let el = |r: &mut ChaCha8Rng| cfg.elevations_deg[r.random_range(0..cfg.elevations_deg.len())];
    let poses = vec![
        Pose::new(az3 + 80.0, el(&mut rng), cfg.radius),
        Pose::new(az3 - 80.0, el(&mut rng), cfg.radius),
        pose3,
    ];
    (scene, poses, 2)
}

/// Per-scene egomotion trial: the memory grows with ground-truth
/// stabilization; every later frame is scored against the memory built
/// so far, so each estimate is judged independently of earlier ones.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EgomotionTrial {
    /// (azimuth error, elevation error) per estimated frame, degrees.
    pub frame_errors: Vec<(f64, f64)>,
    /// Error of the final query frame against the one-view memory.
    pub query_vs_first: (f64, f64),
    /// Error of the final query frame against the full memory.
    pub query_vs_full: (f64, f64),
}

/// Run one egomotion recovery trial over `n_views` integrated views
/// plus one query view.
pub fn egomotion_trial(scene: &Scene, cfg: &PipelineConfig, seed: u64, n_views: usize) -> Result<EgomotionTrial> {
    let poses = scene_view_poses(cfg, seed, n_views + 1);
    let frames = render_frames(scene, &poses[..n_views], cfg, true);
    let query_frames = render_frames(scene, &poses[n_views..], cfg, true);
    let query = &query_frames[0];
    let stack = cfg.rotation_stack();
    let mem_pose = Pose::new(poses[0].azimuth_deg, 0.0, cfg.radius);

    let mut frame_errors = Vec::new();
    let mut memory_after: Vec<FeatureVolume> = Vec::new();
    let mut running: Option<Integration> = None;
    for t in 1..=n_views {
        let integrated = integrate_views(
            &frames[..t],
            &cfg.intrinsics,
            &cfg.grid,
            &FusionMode::Average,
            &EgoMode::Given,
        )?;
        memory_after.push(integrated.memory.clone());
        running = Some(integrated);
    }
    let _ = running;
    // Score frames 2..n against the memory of the preceding views.
    for t in 1..n_views {
        let vol = crate::memory::build_frame_volume(&frames[t], &cfg.intrinsics, &cfg.grid);
        let dist = score_rotations(&vol, &memory_after[t - 1], &stack, cfg.temperature)?;
        let est = estimate_egomotion(&dist);
        let truth = relative_rotation(&frames[t].pose, &mem_pose);
        frame_errors.push(angle_errors(est, truth));
    }
    let query_vol = crate::memory::build_frame_volume(query, &cfg.intrinsics, &cfg.grid);
    let truth = relative_rotation(&query.pose, &mem_pose);
    let est_first = estimate_egomotion(&score_rotations(
        &query_vol,
        &memory_after[0],
        &stack,
        cfg.temperature,
    )?);
    let est_full = estimate_egomotion(&score_rotations(
        &query_vol,
        &memory_after[n_views - 1],
        &stack,
        cfg.temperature,
    )?);
    Ok(EgomotionTrial {
        frame_errors,
        query_vs_first: angle_errors(est_first, truth),
        query_vs_full: angle_errors(est_full, truth),
    })
}

fn angle_errors(estimate: (f64, f64), truth: (f64, f64)) -> (f64, f64) {
    (
        crate::geometry::wrap_angle_deg(estimate.0 - truth.0).abs(),
        (estimate.1 - truth.1).abs(),
    )
}
