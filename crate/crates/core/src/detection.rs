//! 3D box encoding, occupancy-driven proposals, NMS, voxel ROI masks
//! and mean-average-precision evaluation.
//!
//! Boxes are axis-aligned in world coordinates. Masks live on the
//! world-aligned copy of the memory grid (same voxel counts and side,
//! centered at the origin) so predictions and simulator ground truth
//! share one voxel lattice.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::memory::MemoryFrame;
use crate::volume::{FeatureVolume, OCCUPANCY_CHANNEL};

/// Axis-aligned 3D box with a detection score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
    pub score: f64,
    pub instance_id: Option<u32>,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Vector3<f64>, score: f64) -> Self {
        Box3D {
            center,
            dims,
            score,
            instance_id: None,
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.center - self.dims / 2.0
    }

    pub fn max(&self) -> Vector3<f64> {
        self.center + self.dims / 2.0
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn contains(&self, p: Vector3<f64>) -> bool {
        let lo = self.min();
        let hi = self.max();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
    }

    fn require_positive_dims(&self, what: &str) -> Result<()> {
        if self.dims.x > 0.0 && self.dims.y > 0.0 && self.dims.z > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!(
                "{what} has non-positive dims {:?}",
                self.dims
            )))
        }
    }
}

/// VoxelNet-style box encoding: center deltas normalized by the anchor
/// diagonal, dimension deltas as log ratios.
pub fn encode_box(gt: &Box3D, anchor: &Box3D) -> Result<[f64; 6]> {
    gt.require_positive_dims("ground-truth box")?;
    anchor.require_positive_dims("anchor box")?;
    let diag = anchor.dims.norm();
    Ok([
        (gt.center.x - anchor.center.x) / diag,
        (gt.center.y - anchor.center.y) / diag,
        (gt.center.z - anchor.center.z) / diag,
        (gt.dims.x / anchor.dims.x).ln(),
        (gt.dims.y / anchor.dims.y).ln(),
        (gt.dims.z / anchor.dims.z).ln(),
    ])
}

pub fn decode_box(anchor: &Box3D, deltas: &[f64; 6]) -> Result<Box3D> {
    anchor.require_positive_dims("anchor box")?;
    let diag = anchor.dims.norm();
    Ok(Box3D {
        center: Vector3::new(
            anchor.center.x + deltas[0] * diag,
            anchor.center.y + deltas[1] * diag,
            anchor.center.z + deltas[2] * diag,
        ),
        dims: Vector3::new(
            anchor.dims.x * deltas[3].exp(),
            anchor.dims.y * deltas[4].exp(),
            anchor.dims.z * deltas[5].exp(),
        ),
        score: anchor.score,
        instance_id: anchor.instance_id,
    })
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let lo = a.min().sup(&b.min());
    let hi = a.max().inf(&b.max());
    let inter = (hi.x - lo.x).max(0.0) * (hi.y - lo.y).max(0.0) * (hi.z - lo.z).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy non-max suppression: highest score first (ties broken by
/// input index), keep a box iff its IoU with every kept box is below
/// the threshold.
pub fn nms(boxes: &[Box3D], iou_threshold: f64) -> Vec<Box3D> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|a, b| {
        boxes[*b]
            .score
            .total_cmp(&boxes[*a].score)
            .then(a.cmp(b))
    });
    let mut kept: Vec<Box3D> = Vec::new();
    for idx in order {
        let candidate = &boxes[idx];
        if kept.iter().all(|k| iou3d(k, candidate) < iou_threshold) {
            kept.push(*candidate);
        }
    }
    kept
}

/// Grid-aligned anchor tensor: channel 0 objectness, channels 1-6 the
/// box deltas at that cell's unit anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMap {
    pub grid: GridSpec,
    pub data: Vec<f32>,
}

pub const ANCHOR_CHANNELS: usize = 7;

impl AnchorMap {
    pub fn zeros(grid: GridSpec) -> Self {
        AnchorMap {
            grid,
            data: vec![0.0; grid.voxel_count() * ANCHOR_CHANNELS],
        }
    }

    #[inline]
    fn base(&self, i: usize, j: usize, k: usize) -> usize {
        ((i * self.grid.h + j) * self.grid.d + k) * ANCHOR_CHANNELS
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let b = self.base(i, j, k);
        &self.data[b..b + ANCHOR_CHANNELS]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f32] {
        let b = self.base(i, j, k);
        &mut self.data[b..b + ANCHOR_CHANNELS]
    }

    /// Unit anchor box centered at a memory cell's world position.
    pub fn unit_anchor(frame: &MemoryFrame, i: usize, j: usize, k: usize) -> Box3D {
        let center = frame.index_to_world(Vector3::new(i as f64, j as f64, k as f64));
        Box3D::new(center, Vector3::new(1.0, 1.0, 1.0), 1.0)
    }

    /// Decode every positive cell back into a box, in linear cell order.
    pub fn decode(&self, frame: &MemoryFrame) -> Vec<Box3D> {
        let mut out = Vec::new();
        for i in 0..self.grid.w {
            for j in 0..self.grid.h {
                for k in 0..self.grid.d {
                    let cell = self.cell(i, j, k);
                    if cell[0] <= 0.0 {
                        continue;
                    }
                    let anchor = Self::unit_anchor(frame, i, j, k);
                    let deltas = [
                        cell[1] as f64,
                        cell[2] as f64,
                        cell[3] as f64,
                        cell[4] as f64,
                        cell[5] as f64,
                        cell[6] as f64,
                    ];
                    let mut b = decode_box(&anchor, &deltas)
                        .expect("unit anchor is valid");
                    b.score = cell[0] as f64;
                    b.instance_id = None;
                    out.push(b);
                }
            }
        }
        out
    }
}

/// 26-connected components of the thresholded occupancy channel.
/// Returns per-component voxel lists in deterministic scan order.
fn connected_components(
    occ: &FeatureVolume,
    threshold: f32,
) -> Vec<Vec<(usize, usize, usize)>> {
    let grid = occ.grid;
    let above = |i: usize, j: usize, k: usize| occ.at(i, j, k, 0) >= threshold;
    let mut visited = vec![false; grid.voxel_count()];
    let lin = |i: usize, j: usize, k: usize| (i * grid.h + j) * grid.d + k;
    let mut components = Vec::new();
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                if visited[lin(i, j, k)] || !above(i, j, k) {
                    continue;
                }
                let mut stack = vec![(i, j, k)];
                visited[lin(i, j, k)] = true;
                let mut voxels = Vec::new();
                while let Some((ci, cj, ck)) = stack.pop() {
                    voxels.push((ci, cj, ck));
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for dk in -1i64..=1 {
                                if di == 0 && dj == 0 && dk == 0 {
                                    continue;
                                }
                                let (ni, nj, nk) =
                                    (ci as i64 + di, cj as i64 + dj, ck as i64 + dk);
                                if ni < 0
                                    || nj < 0
                                    || nk < 0
                                    || ni >= grid.w as i64
                                    || nj >= grid.h as i64
                                    || nk >= grid.d as i64
                                {
                                    continue;
                                }
                                let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                                if !visited[lin(ni, nj, nk)] && above(ni, nj, nk) {
                                    visited[lin(ni, nj, nk)] = true;
                                    stack.push((ni, nj, nk));
                                }
                            }
                        }
                    }
                }
                voxels.sort_unstable();
                components.push(voxels);
            }
        }
    }
    components
}

/// Propose boxes from the memory's occupancy channel: threshold,
/// extract 26-connected components of at least `min_voxels` voxels,
/// fit each a tight world-axis-aligned box over its voxel cells, and
/// score by component mass normalized by the heaviest component.
///
/// The returned box list equals `AnchorMap::decode` of the returned
/// map, cell for cell.
pub fn propose_from_occupancy(
    memory: &FeatureVolume,
    frame: &MemoryFrame,
    threshold: f32,
    min_voxels: usize,
) -> (AnchorMap, Vec<Box3D>) {
    let occ = memory.channel(OCCUPANCY_CHANNEL);
    let mut map = AnchorMap::zeros(memory.grid);
    let components: Vec<_> = connected_components(&occ, threshold)
        .into_iter()
        .filter(|c| c.len() >= min_voxels)
        .collect();
    if components.is_empty() {
        return (map, Vec::new());
    }
    struct Fit {
        centroid_cell: (usize, usize, usize),
        bounds: Box3D,
        mass: f64,
    }
    let mut fits = Vec::with_capacity(components.len());
    for voxels in &components {
        let mut mass = 0.0f64;
        let mut sum = Vector3::zeros();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &(i, j, k) in voxels {
            mass += occ.at(i, j, k, 0) as f64;
            sum += Vector3::new(i as f64, j as f64, k as f64);
            // Bound the full voxel cell, not just its center.
            for corner in 0..8 {
                let off = Vector3::new(
                    if corner & 1 == 0 { -0.5 } else { 0.5 },
                    if corner & 2 == 0 { -0.5 } else { 0.5 },
                    if corner & 4 == 0 { -0.5 } else { 0.5 },
                );
                let p = frame
                    .index_to_world(Vector3::new(i as f64, j as f64, k as f64) + off);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        let mean = sum / voxels.len() as f64;
        let cell = (
            (mean.x.round() as usize).min(memory.grid.w - 1),
            (mean.y.round() as usize).min(memory.grid.h - 1),
            (mean.z.round() as usize).min(memory.grid.d - 1),
        );
        fits.push(Fit {
            centroid_cell: cell,
            bounds: Box3D::new((lo + hi) / 2.0, hi - lo, 0.0),
            mass,
        });
    }
    let max_mass = fits.iter().map(|f| f.mass).fold(f64::MIN, f64::max);
    // Fill the anchor map; a centroid collision (possible only for
    // interlocking components) shifts to the next free cell.
    for fit in &fits {
        let (mut i, mut j, mut k) = fit.centroid_cell;
        while map.cell(i, j, k)[0] > 0.0 {
            k += 1;
            if k == memory.grid.d {
                k = 0;
                j += 1;
                if j == memory.grid.h {
                    j = 0;
                    i = (i + 1) % memory.grid.w;
                }
            }
        }
        let anchor = AnchorMap::unit_anchor(frame, i, j, k);
        let deltas = encode_box(&fit.bounds, &anchor).expect("fitted dims are positive");
        let cell = map.cell_mut(i, j, k);
        cell[0] = (fit.mass / max_mass) as f32;
        for (dst, d) in cell[1..].iter_mut().zip(&deltas) {
            *dst = *d as f32;
        }
    }
    let boxes = map.decode(frame);
    (map, boxes)
}

/// Binary voxel mask on the world-aligned grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub grid: GridSpec,
    pub data: Vec<bool>,
}

impl VoxelMask {
    pub fn empty(grid: GridSpec) -> Self {
        VoxelMask {
            grid,
            data: vec![false; grid.voxel_count()],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Voxel-set intersection over union.
    pub fn iou(&self, other: &VoxelMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Center of world-grid voxel (i, j, k): the grid spans
/// [-side/2, side/2]^3 around the origin, axes parallel to the world.
pub fn world_voxel_center(grid: &GridSpec, i: usize, j: usize, k: usize) -> Vector3<f64> {
    let pitch = grid.pitch();
    let c = grid.center_index();
    Vector3::new(
        (i as f64 - c.x) * pitch.x,
        (j as f64 - c.y) * pitch.y,
        (k as f64 - c.z) * pitch.z,
    )
}

/// Occupancy mask inside a box: every world-grid voxel whose center
/// lies in the box and whose sampled memory occupancy reaches the
/// threshold, plus the spanned interior. Depth shells leave object
/// cores hollow (and partially open where views are occluded), so a
/// voxel also counts as occupied when it lies between two occupied
/// voxels along any grid axis within the box. A box that misses the
/// grid yields an empty mask.
pub fn roi_mask(
    memory: &FeatureVolume,
    frame: &MemoryFrame,
    bbox: &Box3D,
    threshold: f32,
) -> VoxelMask {
    let grid = memory.grid;
    let mut mask = VoxelMask::empty(grid);
    let mut inside = vec![false; grid.voxel_count()];
    let mut sample = vec![0.0f32; memory.channels];
    let mut n = 0;
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = world_voxel_center(&grid, i, j, k);
                if bbox.contains(p) {
                    inside[n] = true;
                    let idx = frame.world_to_index(p);
                    memory.sample_trilinear(idx.x, idx.y, idx.z, &mut sample);
                    mask.data[n] = sample[OCCUPANCY_CHANNEL] >= threshold;
                }
                n += 1;
            }
        }
    }
    fill_enclosed(&mut mask, &inside);
    mask
}

/// Mark box-interior voxels lying between two mask voxels along some
/// grid axis.
fn fill_enclosed(mask: &mut VoxelMask, inside: &[bool]) {
    let grid = mask.grid;
    let lin = |i: usize, j: usize, k: usize| (i * grid.h + j) * grid.d + k;
    let occupied = mask.data.clone();
    // Walk every axis-aligned line; inside each contiguous in-box run,
    // fill between the first and last occupied voxel.
    let mut fill_line = |line: &[usize]| {
        let mut run: Vec<usize> = Vec::new();
        let mut flush = |run: &mut Vec<usize>| {
            let occ_pos: Vec<usize> = run
                .iter()
                .enumerate()
                .filter(|(_, n)| occupied[**n])
                .map(|(pos, _)| pos)
                .collect();
            if let (Some(&first), Some(&last)) = (occ_pos.first(), occ_pos.last()) {
                for &n in &run[first..=last] {
                    mask.data[n] = true;
                }
            }
            run.clear();
        };
        for &n in line {
            if inside[n] {
                run.push(n);
            } else {
                flush(&mut run);
            }
        }
        flush(&mut run);
    };
    let mut line = Vec::with_capacity(grid.w.max(grid.h).max(grid.d));
    for j in 0..grid.h {
        for k in 0..grid.d {
            line.clear();
            line.extend((0..grid.w).map(|i| lin(i, j, k)));
            fill_line(&line);
        }
    }
    for i in 0..grid.w {
        for k in 0..grid.d {
            line.clear();
            line.extend((0..grid.h).map(|j| lin(i, j, k)));
            fill_line(&line);
        }
    }
    for i in 0..grid.w {
        for j in 0..grid.h {
            line.clear();
            line.extend((0..grid.d).map(|k| lin(i, j, k)));
            fill_line(&line);
        }
    }
}

/// Run-length encode the mask over the box-interior voxels in grid
/// linear order; runs alternate empty/occupied starting with empty.
pub fn mask_to_rle(mask: &VoxelMask, bbox: &Box3D) -> Vec<u32> {
    let grid = mask.grid;
    let mut runs = vec![0u32];
    let mut current = false;
    let mut n = 0;
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = world_voxel_center(&grid, i, j, k);
                if bbox.contains(p) {
                    let v = mask.data[n];
                    if v == current {
                        *runs.last_mut().unwrap() += 1;
                    } else {
                        runs.push(1);
                        current = v;
                    }
                }
                n += 1;
            }
        }
    }
    runs
}

pub fn rle_to_mask(rle: &[u32], bbox: &Box3D, grid: &GridSpec) -> VoxelMask {
    let mut mask = VoxelMask::empty(*grid);
    let mut run_idx = 0usize;
    let mut remaining = rle.first().copied().unwrap_or(0);
    let mut current = false;
    let mut n = 0;
    for i in 0..grid.w {
        for j in 0..grid.h {
            for k in 0..grid.d {
                let p = world_voxel_center(grid, i, j, k);
                if bbox.contains(p) {
                    while remaining == 0 && run_idx + 1 < rle.len() {
                        run_idx += 1;
                        remaining = rle[run_idx];
                        current = !current;
                    }
                    if remaining > 0 {
                        mask.data[n] = current;
                        remaining -= 1;
                    }
                }
                n += 1;
            }
        }
    }
    mask
}

/// One detection: a scored box and optionally its voxel mask.
#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: Box3D,
    pub mask: Option<VoxelMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Box,
    Mask,
}

/// Mean average precision over ranked detections: predictions are
/// matched greedily by descending score to the best-IoU unmatched
/// ground truth of the same scene; AP is the area under the
/// precision-envelope interpolated PR curve.
pub fn evaluate_map(
    predictions: &[Vec<Detection>],
    ground_truth: &[Vec<Detection>],
    iou_threshold: f64,
    mode: EvalMode,
) -> f64 {
    assert_eq!(
        predictions.len(),
        ground_truth.len(),
        "per-scene lists must align"
    );
    let total_gt: usize = ground_truth.iter().map(|g| g.len()).sum();
    let mut ranked: Vec<(usize, usize)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(s, dets)| (0..dets.len()).map(move |d| (s, d)))
        .collect();
    ranked.sort_by(|a, b| {
        predictions[b.0][b.1]
            .bbox
            .score
            .total_cmp(&predictions[a.0][a.1].bbox.score)
            .then(a.cmp(b))
    });
    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for (s, d) in ranked {
        let det = &predictions[s][d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth[s].iter().enumerate() {
            if matched[s][g] {
                continue;
            }
            let overlap = match mode {
                EvalMode::Box => iou3d(&det.bbox, &gt.bbox),
                EvalMode::Mask => match (&det.mask, &gt.mask) {
                    (Some(a), Some(b)) => a.iou(b),
                    _ => 0.0,
                },
            };
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        match best {
            Some((g, overlap)) if overlap >= iou_threshold => {
                matched[s][g] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }
    if total_gt == 0 {
        return if tp_flags.is_empty() { 1.0 } else { 0.0 };
    }
    // Precision-envelope (all-point) area under the PR curve.
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(tp_flags.len());
    for (n, is_tp) in tp_flags.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        points.push((
            tp as f64 / total_gt as f64,
            tp as f64 / (n + 1) as f64,
        ));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut next_recall = points.last().map_or(0.0, |p| p.0);
    for &(recall, precision) in points.iter().rev() {
        envelope = envelope.max(precision);
        ap += (next_recall - recall) * envelope;
        next_recall = recall;
    }
    ap + next_recall * envelope
}

// ---------------------------------------------------------------------------
// Detections JSON schema

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneDetections {
    pub scene: u64,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionRecord {
    pub fn from_detection(det: &Detection) -> Self {
        DetectionRecord {
            center: [det.bbox.center.x, det.bbox.center.y, det.bbox.center.z],
            dims: [det.bbox.dims.x, det.bbox.dims.y, det.bbox.dims.z],
            score: det.bbox.score,
            mask_rle: det.mask.as_ref().map(|m| {
                mask_to_rle(
                    m,
                    &Box3D::new(
                        Vector3::from_column_slice(&[
                            det.bbox.center.x,
                            det.bbox.center.y,
                            det.bbox.center.z,
                        ]),
                        Vector3::from_column_slice(&[
                            det.bbox.dims.x,
                            det.bbox.dims.y,
                            det.bbox.dims.z,
                        ]),
                        det.bbox.score,
                    ),
                )
            }),
            instance_id: det.bbox.instance_id,
        }
    }

    pub fn to_detection(&self, grid: &GridSpec) -> Detection {
        let mut bbox = Box3D::new(
            Vector3::from_column_slice(&self.center),
            Vector3::from_column_slice(&self.dims),
            self.score,
        );
        bbox.instance_id = self.instance_id;
        Detection {
            mask: self.mask_rle.as_ref().map(|rle| rle_to_mask(rle, &bbox, grid)),
            bbox,
        }
    }
}
