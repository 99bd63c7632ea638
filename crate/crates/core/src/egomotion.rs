//! Relative-rotation estimation by matching the current unprojected
//! tensor against the feature memory over a discrete rotation stack,
//! and the stabilization that cancels the estimated egomotion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_yaw_pitch, wrap_angle_deg};
use crate::volume::FeatureVolume;

/// Softmax sharpness: raw normalized correlations in [-1, 1] are
/// divided by this before the softmax.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Discrete candidate rotations: the cross product of azimuth and
/// elevation lists, enumerated elevation-major / azimuth-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationStackSpec {
    pub azimuths_deg: Vec<f64>,
    pub elevations_deg: Vec<f64>,
}

impl RotationStackSpec {
    pub fn new(azimuths_deg: Vec<f64>, elevations_deg: Vec<f64>) -> Self {
        RotationStackSpec {
            azimuths_deg,
            elevations_deg,
        }
    }

    /// 18 azimuths at 20 degree spacing, wrapped to (-180, 180].
    pub fn full_azimuth_circle(step_deg: f64, elevations_deg: Vec<f64>) -> Self {
        let count = (360.0 / step_deg).round() as usize;
        let azimuths = (0..count)
            .map(|i| wrap_angle_deg(i as f64 * step_deg))
            .collect();
        RotationStackSpec::new(azimuths, elevations_deg)
    }

    pub fn len(&self) -> usize {
        self.azimuths_deg.len() * self.elevations_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates in canonical order (elevation-major, azimuth-minor).
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &el in &self.elevations_deg {
            for &az in &self.azimuths_deg {
                out.push((az, el));
            }
        }
        out
    }
}

impl Default for RotationStackSpec {
    /// Matches the viewing-sphere protocol: relative azimuths over the
    /// full circle at 20 degree steps, view elevations 20/40/60 against
    /// a ground-parallel memory.
    fn default() -> Self {
        RotationStackSpec::full_azimuth_circle(20.0, vec![20.0, 40.0, 60.0])
    }
}

/// Probability distribution over candidate rotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationDistribution {
    pub candidates: Vec<(f64, f64)>,
    pub probs: Vec<f64>,
}

impl RotationDistribution {
    /// Candidate with the highest probability (first on ties).
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = 0;
        for (n, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = n;
            }
        }
        self.candidates[best]
    }
}

/// Resample `v` so that the rotation labelled `(azimuth, elevation)` is
/// cancelled: the result of `stabilize(v, r)` aligns with the frame `v`
/// was rotated away from by `r`.
pub fn stabilize(v: &FeatureVolume, rotation: (f64, f64)) -> FeatureVolume {
    // resample_rotated takes the destination-to-source map, which for
    // cancelling an active rotation R is R itself.
    v.resample_rotated(&rotation_yaw_pitch(rotation.0, rotation.1))
}

/// Cancel the absolute elevation of the first view so the memory stays
/// parallel to the ground plane. The memory azimuth reference remains
/// the first view's azimuth.
pub fn orient_first_view(v: &FeatureVolume, absolute_elevation_deg: f64) -> FeatureVolume {
    v.rotate(0.0, -absolute_elevation_deg)
}

/// Score every candidate rotation by normalized correlation between the
/// stabilized tensor and the memory, then softmax at `temperature`.
pub fn score_rotations(
    v: &FeatureVolume,
    memory: &FeatureVolume,
    spec: &RotationStackSpec,
    temperature: f64,
) -> Result<RotationDistribution> {
    if !v.same_shape(memory) {
        return Err(Error::shape("score_rotations: tensor and memory differ"));
    }
    let memory_norm = memory.l2_norm();
    if memory_norm == 0.0 {
        return Err(Error::DegenerateMatch("memory is all zero"));
    }
    if v.l2_norm() == 0.0 {
        return Err(Error::DegenerateMatch("input tensor is all zero"));
    }
    let candidates = spec.candidates();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&(az, el)| {
            let aligned = stabilize(v, (az, el));
            let norm = aligned.l2_norm();
            let dot = memory
                .inner_product(&aligned)
                .expect("shapes verified above");
            dot / (memory_norm * norm + 1e-12) / temperature
        })
        .collect();
    // Stable softmax over the canonical candidate order.
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(RotationDistribution {
        candidates,
        probs: exps.iter().map(|e| e / total).collect(),
    })
}

/// Expected rotation under the distribution: plain weighted average for
/// elevation, circular mean for azimuth (the plain average is
/// ill-defined across the 0/360 seam).
pub fn estimate_egomotion(dist: &RotationDistribution) -> (f64, f64) {
    let mut sin_sum = 0.0;
    let mut cos_sum = 0.0;
    let mut el_sum = 0.0;
    for (&(az, el), &p) in dist.candidates.iter().zip(&dist.probs) {
        let a = az.to_radians();
        sin_sum += p * a.sin();
        cos_sum += p * a.cos();
        el_sum += p * el;
    }
    (wrap_angle_deg(sin_sum.atan2(cos_sum).to_degrees()), el_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use nalgebra::Vector3;

    fn blob(grid: GridSpec, sigma: f64, center: Vector3<f64>) -> FeatureVolume {
        let mut v = FeatureVolume::zeros(grid, 1);
        for i in 0..grid.w {
            for j in 0..grid.h {
                for k in 0..grid.d {
                    let r2 = (i as f64 - center.x).powi(2)
                        + (j as f64 - center.y).powi(2)
                        + (k as f64 - center.z).powi(2);
                    v.set(i, j, k, 0, (-r2 / (2.0 * sigma * sigma)).exp() as f32);
                }
            }
        }
        v
    }

    /// Asymmetric two-blob field so rotation matching has a sharp peak.
    fn two_blob(grid: GridSpec) -> FeatureVolume {
        let a = blob(grid, 2.5, Vector3::new(22.0, 15.5, 15.5));
        let b = blob(grid, 1.8, Vector3::new(15.5, 11.0, 20.0));
        a.add(&b).unwrap()
    }

    fn test_stack() -> RotationStackSpec {
        RotationStackSpec::full_azimuth_circle(20.0, vec![-40.0, -20.0, 0.0, 20.0, 40.0])
    }

    #[test]
    fn identical_volumes_peak_at_zero() {
        let grid = GridSpec::default();
        let m = two_blob(grid);
        let dist = score_rotations(&m, &m, &test_stack(), DEFAULT_TEMPERATURE).unwrap();
        assert_eq!(dist.argmax(), (0.0, 0.0));
        let total: f64 = dist.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_volume_peaks_at_cancelling_candidate() {
        // Brute force over the full candidate stack: the argmax must be
        // the rotation that stabilize() cancels, i.e. +40 azimuth.
        let grid = GridSpec::default();
        let m = two_blob(grid);
        let v = m.rotate(40.0, 0.0);
        let dist = score_rotations(&v, &m, &test_stack(), DEFAULT_TEMPERATURE).unwrap();
        assert_eq!(dist.argmax(), (40.0, 0.0));
    }

    #[test]
    fn spherically_symmetric_memory_is_near_uniform() {
        let grid = GridSpec::default();
        let m = blob(grid, 3.0, Vector3::new(15.5, 15.5, 15.5));
        let dist = score_rotations(&m, &m, &test_stack(), DEFAULT_TEMPERATURE).unwrap();
        let max = dist.probs.iter().cloned().fold(f64::MIN, f64::max);
        let min = dist.probs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 0.02, "spread {}", max - min);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let grid = GridSpec::default();
        let zeros = FeatureVolume::zeros(grid, 1);
        let m = two_blob(grid);
        assert!(matches!(
            score_rotations(&m, &zeros, &test_stack(), DEFAULT_TEMPERATURE),
            Err(Error::DegenerateMatch(_))
        ));
        assert!(matches!(
            score_rotations(&zeros, &m, &test_stack(), DEFAULT_TEMPERATURE),
            Err(Error::DegenerateMatch(_))
        ));
    }

    #[test]
    fn argmax_invariant_to_scaling_and_temperature() {
        let grid = GridSpec::default();
        let m = two_blob(grid);
        let v = m.rotate(-60.0, 20.0);
        let reference = score_rotations(&v, &m, &test_stack(), DEFAULT_TEMPERATURE)
            .unwrap()
            .argmax();
        for (alpha, beta, temp) in [(2.0, 0.5, 0.05), (0.1, 3.0, 1.0), (10.0, 10.0, 0.01)] {
            let dist =
                score_rotations(&v.scale(alpha), &m.scale(beta), &test_stack(), temp).unwrap();
            assert_eq!(dist.argmax(), reference);
        }
    }

    #[test]
    fn estimate_examples() {
        // One-hot at (20, 40).
        let stack = test_stack();
        let candidates = stack.candidates();
        let mut probs = vec![0.0; candidates.len()];
        let hot = candidates
            .iter()
            .position(|c| *c == (20.0, 40.0))
            .unwrap();
        probs[hot] = 1.0;
        let dist = RotationDistribution {
            candidates: candidates.clone(),
            probs,
        };
        let (az, el) = estimate_egomotion(&dist);
        assert!((az - 20.0).abs() < 1e-9);
        assert!((el - 40.0).abs() < 1e-9);

        // Equal mass at azimuths 350 (= -10) and 10: circular mean 0.
        let dist = RotationDistribution {
            candidates: vec![(-10.0, 0.0), (10.0, 0.0)],
            probs: vec![0.5, 0.5],
        };
        let (az, el) = estimate_egomotion(&dist);
        assert!(az.abs() < 1e-9, "seam case gave {az}");
        assert_eq!(el, 0.0);

        // Elevation weighted sum.
        let dist = RotationDistribution {
            candidates: vec![(0.0, 20.0), (0.0, 40.0)],
            probs: vec![0.75, 0.25],
        };
        let (_, el) = estimate_egomotion(&dist);
        assert!((el - 25.0).abs() < 1e-9);
    }

    #[test]
    fn stabilize_identity_and_round_trip() {
        let grid = GridSpec::default();
        let m = blob(grid, 4.0, Vector3::new(15.5, 15.5, 15.5));
        let same = stabilize(&m, (0.0, 0.0));
        assert_eq!(same.data, m.data);

        for rot in [(40.0, 0.0), (0.0, -20.0), (60.0, 40.0)] {
            let v = m.resample_rotated(&rotation_yaw_pitch(rot.0, rot.1).transpose());
            let back = stabilize(&v, rot);
            let mut max_err = 0.0f32;
            for i in 4..28 {
                for j in 4..28 {
                    for k in 4..28 {
                        max_err =
                            max_err.max((back.at(i, j, k, 0) - m.at(i, j, k, 0)).abs());
                    }
                }
            }
            assert!(max_err < 0.05, "round trip error {max_err} for {rot:?}");
        }
    }

    #[test]
    fn stabilize_with_estimate_recovers_alignment() {
        let grid = GridSpec::default();
        let m = two_blob(grid);
        let v = m.rotate(80.0, 20.0);
        let dist = score_rotations(&v, &m, &test_stack(), DEFAULT_TEMPERATURE).unwrap();
        let aligned = stabilize(&v, dist.argmax());
        let corr = m.inner_product(&aligned).unwrap() / (m.l2_norm() * aligned.l2_norm());
        assert!(corr >= 0.98, "correlation after stabilization: {corr}");
    }

    #[test]
    fn orient_first_view_examples() {
        let grid = GridSpec::default();
        let m = blob(grid, 4.0, Vector3::new(13.0, 15.5, 18.0));
        assert_eq!(orient_first_view(&m, 0.0).data, m.data);

        // A spike moves as a -20 degree pitch about the grid center.
        let mut spike = FeatureVolume::zeros(grid, 1);
        spike.set(15, 24, 16, 0, 1.0);
        let oriented = orient_first_view(&spike, 20.0);
        // Offset (-.5, 8.5, .5) under pitch by -20 deg:
        // y' = cos(-20)*8.5 - sin(-20)*0.5, z' = sin(-20)*8.5 + cos(-20)*0.5.
        let e = (-20.0f64).to_radians();
        let y = e.cos() * 8.5 - e.sin() * 0.5 + 15.5;
        let z = e.sin() * 8.5 + e.cos() * 0.5 + 15.5;
        let mut best = (0usize, 0usize, 0usize, 0.0f32);
        for i in 0..32 {
            for j in 0..32 {
                for k in 0..32 {
                    if oriented.at(i, j, k, 0) > best.3 {
                        best = (i, j, k, oriented.at(i, j, k, 0));
                    }
                }
            }
        }
        assert_eq!(best.0, 15);
        assert!((best.1 as f64 - y).abs() <= 0.51, "y: {} vs {y}", best.1);
        assert!((best.2 as f64 - z).abs() <= 0.51, "z: {} vs {z}", best.2);

        // Orient then un-rotate round trip on a smooth field.
        let oriented = orient_first_view(&m, 20.0);
        let back = oriented.rotate(0.0, 20.0);
        let mut max_err = 0.0f32;
        for i in 4..28 {
            for j in 4..28 {
                for k in 4..28 {
                    max_err = max_err.max((back.at(i, j, k, 0) - m.at(i, j, k, 0)).abs());
                }
            }
        }
        assert!(max_err < 0.05, "round trip error {max_err}");
    }
}
