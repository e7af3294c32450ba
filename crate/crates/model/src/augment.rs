//! Training-time augmentation and input normalization.
//!
//! Boxes are stored normalized to `[0, 1]`, so resizing leaves them unchanged
//! and only the horizontal flip touches annotations.

use ndarray::Array2;
use occlu_core::PairAnnotation;
use occlu_scene::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{ImageBatch, ModelError, Real};

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Batch resize factor range relative to the base resolution.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum additive brightness shift, in `[0, 1]` pixel units.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, scale_min: 0.8, scale_max: 1.2, brightness: 0.2, contrast: 0.2 }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn none() -> Self {
        Self { flip_prob: 0.0, scale_min: 1.0, scale_max: 1.0, brightness: 0.0, contrast: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.brightness >= 0.0
            && (0.0..1.0).contains(&self.contrast);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!("invalid augmentation settings {self:?}")))
        }
    }
}

/// RGB image with `f32` values in `[0, 1]`, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width as usize,
            height: img.height as usize,
            data: img.data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend((0..3).map(|c| self.at(x, y, c)));
            }
        }
        Self { data, ..*self }
    }

    /// Bilinear resampling with pixel centers aligned.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let axis = |dst: usize, src_len: usize, dst_len: usize| {
            let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, (s - i0 as f64) as f32)
        };
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, self.height, height);
            for x in 0..width {
                let (x0, x1, fx) = axis(x, self.width, width);
                for c in 0..3 {
                    let top = self.at(x0, y0, c) * (1.0 - fx) + self.at(x1, y0, c) * fx;
                    let bottom = self.at(x0, y1, c) * (1.0 - fx) + self.at(x1, y1, c) * fx;
                    data.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        Self { width, height, data }
    }

    /// `(v - mean) * contrast + mean + brightness`, clamped to `[0, 1]`, where
    /// `mean` is the image mean.
    pub fn adjust(&mut self, brightness: f32, contrast: f32) {
        let mean = self.data.iter().sum::<f32>() / self.data.len().max(1) as f32;
        for v in &mut self.data {
            *v = ((*v - mean) * contrast + mean + brightness).clamp(0.0, 1.0);
        }
    }
}

pub fn flip_annotations(pairs: &[PairAnnotation<f64>]) -> Vec<PairAnnotation<f64>> {
    pairs.iter().map(PairAnnotation::flip_horizontal).collect()
}

/// Flip and photometric jitter for one sample; resizing is per batch.
pub fn augment_sample<R: Rng>(
    image: &FloatImage,
    pairs: &[PairAnnotation<f64>],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (FloatImage, Vec<PairAnnotation<f64>>) {
    let (mut img, pairs) = if rng.random_bool(cfg.flip_prob) {
        (image.flip_horizontal(), flip_annotations(pairs))
    } else {
        (image.clone(), pairs.to_vec())
    };
    let b = if cfg.brightness > 0.0 { rng.random_range(-cfg.brightness..=cfg.brightness) } else { 0.0 };
    let c = if cfg.contrast > 0.0 { rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast) } else { 1.0 };
    if b != 0.0 || c != 1.0 {
        img.adjust(b as f32, c as f32);
    }
    (img, pairs)
}

/// Batch resize factor drawn uniformly from the configured range.
pub fn random_scale<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> f64 {
    if cfg.scale_max > cfg.scale_min {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    }
}

/// Resize every image to `width x height`, normalize and stack.
pub fn to_batch<F: Real>(images: &[FloatImage], width: usize, height: usize) -> Result<ImageBatch<F>, ModelError> {
    let mut data = Array2::zeros((images.len() * width * height, 3));
    let (mean, inv_std) = (PIXEL_MEAN as f32, 1.0 / PIXEL_STD as f32);
    for (b, img) in images.iter().enumerate() {
        let img = img.resize(width, height);
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[[b * width * height + i, c]] = F::lit(f64::from((v - mean) * inv_std));
            }
        }
    }
    ImageBatch::new(data, images.len(), height, width)
}
