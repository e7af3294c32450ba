use serde::{Deserialize, Serialize};

use crate::SceneError;

/// Parameters of the layered scene generator.
///
/// Depth levels are deliberately well separated relative to `same_band`: two
/// objects share a level exactly when their distance label is `same`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub width: u32,
    pub height: u32,
    pub num_categories: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_parts: usize,
    pub max_parts: usize,
    /// Object extent as a fraction of the image side.
    pub min_size: f64,
    pub max_size: f64,
    pub depth_levels: Vec<f64>,
    /// Relative per-part depth jitter around its level.
    pub depth_jitter: f64,
    /// Relative distance gap at or below which two objects count as `same`.
    pub same_band: f64,
    /// Chance that a scene contains a pair built to occlude each other mutually.
    pub interleave_prob: f64,
    /// Chance that an object is placed overlapping an earlier one.
    pub overlap_prob: f64,
    /// Objects with a smaller visible share of their own area are rejected.
    pub min_visible_fraction: f64,
    /// Blend toward the background color at the farthest level.
    pub max_fog: f64,
    pub noise: f64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            num_categories: 6,
            min_objects: 2,
            max_objects: 3,
            min_parts: 1,
            max_parts: 2,
            min_size: 0.22,
            max_size: 0.5,
            depth_levels: vec![2.0, 3.0, 4.5, 6.5],
            depth_jitter: 0.01,
            same_band: 0.05,
            interleave_prob: 0.35,
            overlap_prob: 0.6,
            min_visible_fraction: 0.35,
            max_fog: 0.7,
            noise: 4.0,
            max_attempts: 200,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: &str| Err(SceneError::Config(msg.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if self.num_categories == 0 {
            return bad("num_categories must be positive");
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad("object count range must satisfy 1 <= min_objects <= max_objects");
        }
        if self.min_parts < 1 || self.min_parts > self.max_parts || self.max_parts > 2 {
            return bad("part count range must satisfy 1 <= min_parts <= max_parts <= 2");
        }
        if !(0.0 < self.min_size && self.min_size <= self.max_size && self.max_size <= 1.0) {
            return bad("size range must satisfy 0 < min_size <= max_size <= 1");
        }
        if self.depth_levels.is_empty() || self.depth_levels.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("depth_levels must be positive and finite");
        }
        if self.depth_levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("depth_levels must be strictly increasing");
        }
        if !(0.0..0.5).contains(&self.depth_jitter) || !(0.0..1.0).contains(&self.same_band) {
            return bad("depth_jitter must lie in [0, 0.5) and same_band in [0, 1)");
        }
        for p in [self.interleave_prob, self.overlap_prob, self.max_fog] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities and max_fog must lie in [0, 1]");
            }
        }
        if !(self.min_visible_fraction > 0.0 && self.min_visible_fraction <= 1.0) {
            return bad("min_visible_fraction must lie in (0, 1]");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }

    /// Interleaved pairs need three levels: near part, the other object, far part.
    pub(crate) fn can_interleave(&self) -> bool {
        self.max_objects >= 2 && self.max_parts >= 2 && self.depth_levels.len() >= 3
    }
}
