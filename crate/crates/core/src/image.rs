//! In-memory image and depth map types.

use crate::geometry::bilinear_sample;

/// Multi-channel 2D image, values in [0, 1], stored row-major as
/// `data[(y * width + x) * channels + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn constant(width: usize, height: usize, value: &[f32]) -> Self {
        let channels = value.len();
        let mut img = Image::zeros(width, height, channels);
        for px in img.data.chunks_exact_mut(channels) {
            px.copy_from_slice(value);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Bilinear sample at sub-pixel coordinates; zero outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        bilinear_sample(
            &self.data,
            self.width,
            self.height,
            self.channels,
            x,
            y,
            out,
        );
    }
}

/// Single-channel depth map in world units; `f32::INFINITY` marks
/// pixels where no surface was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        DepthMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear depth sample. Returns `f32::INFINITY` outside the image
    /// or when any contributing corner is a no-hit pixel, so callers
    /// treating infinity as "no surface" stay consistent at silhouettes.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        self.sample_surface(x, y, f32::INFINITY)
    }

    /// Bilinear depth sample that guards against depth discontinuities:
    /// when the contributing corners span more than `max_spread`, the
    /// pixel straddles a silhouette between two surfaces and the
    /// interpolated value is a fiction, so the dominant corner's true
    /// depth is reported instead.
    pub fn sample_surface(&self, x: f64, y: f64, max_spread: f32) -> f32 {
        if x < 0.0
            || y < 0.0
            || x > (self.width - 1) as f64
            || y > (self.height - 1) as f64
        {
            return f32::INFINITY;
        }
        let x0f = x.floor();
        let y0f = y.floor();
        let tx = (x - x0f) as f32;
        let ty = (y - y0f) as f32;
        let x0 = x0f as usize;
        let y0 = y0f as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let corners = [
            (self.at(x0, y0), (1.0 - tx) * (1.0 - ty)),
            (self.at(x1, y0), tx * (1.0 - ty)),
            (self.at(x0, y1), (1.0 - tx) * ty),
            (self.at(x1, y1), tx * ty),
        ];
        let mut acc = 0.0f32;
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        let mut dominant = (f32::INFINITY, 0.0f32);
        for &(v, wgt) in &corners {
            if wgt == 0.0 {
                continue;
            }
            if !v.is_finite() {
                return f32::INFINITY;
            }
            lo = lo.min(v);
            hi = hi.max(v);
            if wgt > dominant.1 {
                dominant = (v, wgt);
            }
            acc += v * wgt;
        }
        if hi - lo > max_spread {
            return dominant.0;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_sampling_handles_no_hit_corners() {
        let mut d = DepthMap::filled(2, 2, 3.0);
        d.set(1, 0, f32::INFINITY);
        // Pure corner sample away from the infinite pixel is finite.
        assert_eq!(d.sample_bilinear(0.0, 1.0), 3.0);
        // Any blend that touches the infinite corner is a no-hit.
        assert!(!d.sample_bilinear(0.5, 0.0).is_finite());
        // Outside the image is a no-hit.
        assert!(!d.sample_bilinear(-0.5, 0.0).is_finite());
    }

    #[test]
    fn constant_image_pixels() {
        let img = Image::constant(3, 2, &[0.25, 0.5, 0.75]);
        assert_eq!(img.pixel(2, 1), &[0.25, 0.5, 0.75]);
    }
}
