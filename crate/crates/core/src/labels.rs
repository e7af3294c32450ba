//! Relationship label spaces and the per-pair ground truth record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{generalized_intersection_box, BBox};
use crate::Scalar;

pub const NUM_DISTANCE: usize = 4;
pub const NUM_OCCLUSION: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("distance class index {0} out of range")]
    Distance(usize),
    #[error("occlusion class index {0} out of range")]
    Occlusion(usize),
    #[error("object class {class} out of range for {num_classes} classes")]
    Object { class: usize, num_classes: usize },
}

/// Relative distance of object A with respect to object B, from the viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceClass {
    ACloser,
    BCloser,
    Same,
    NotSure,
}

impl DistanceClass {
    pub const ALL: [DistanceClass; NUM_DISTANCE] =
        [DistanceClass::ACloser, DistanceClass::BCloser, DistanceClass::Same, DistanceClass::NotSure];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, LabelError> {
        Self::ALL.get(i).copied().ok_or(LabelError::Distance(i))
    }

    /// Label of the same pair with A and B swapped.
    pub fn converse(self) -> Self {
        match self {
            DistanceClass::ACloser => DistanceClass::BCloser,
            DistanceClass::BCloser => DistanceClass::ACloser,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceClass::ACloser => "a_closer",
            DistanceClass::BCloser => "b_closer",
            DistanceClass::Same => "same",
            DistanceClass::NotSure => "not_sure",
        }
    }
}

/// Relative occlusion between A and B, looking along the camera direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionClass {
    AOccludesB,
    BOccludesA,
    None,
    Mutual,
}

impl OcclusionClass {
    pub const ALL: [OcclusionClass; NUM_OCCLUSION] =
        [OcclusionClass::AOccludesB, OcclusionClass::BOccludesA, OcclusionClass::None, OcclusionClass::Mutual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, LabelError> {
        Self::ALL.get(i).copied().ok_or(LabelError::Occlusion(i))
    }

    pub fn converse(self) -> Self {
        match self {
            OcclusionClass::AOccludesB => OcclusionClass::BOccludesA,
            OcclusionClass::BOccludesA => OcclusionClass::AOccludesB,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OcclusionClass::AOccludesB => "a_occludes_b",
            OcclusionClass::BOccludesA => "b_occludes_a",
            OcclusionClass::None => "none",
            OcclusionClass::Mutual => "mutual",
        }
    }
}

/// Ground truth for one ordered object pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct PairAnnotation<F> {
    pub box_a: BBox<F>,
    pub box_b: BBox<F>,
    pub cat_a: usize,
    pub cat_b: usize,
    pub distance: DistanceClass,
    pub occlusion: OcclusionClass,
}

impl<F: Scalar> PairAnnotation<F> {
    /// The same pair seen with A and B swapped.
    pub fn converse(&self) -> Self {
        Self {
            box_a: self.box_b,
            box_b: self.box_a,
            cat_a: self.cat_b,
            cat_b: self.cat_a,
            distance: self.distance.converse(),
            occlusion: self.occlusion.converse(),
        }
    }

    pub fn intersection_target(&self) -> BBox<F> {
        generalized_intersection_box(&self.box_a, &self.box_b)
    }

    /// Whether the two object boxes share positive area.
    pub fn boxes_intersect(&self) -> bool {
        self.box_a.intersection(&self.box_b).is_some()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self { box_a: self.box_a.flip_horizontal(), box_b: self.box_b.flip_horizontal(), ..*self }
    }

    pub fn check_categories(&self, num_classes: usize) -> Result<(), LabelError> {
        for class in [self.cat_a, self.cat_b] {
            if class >= num_classes {
                return Err(LabelError::Object { class, num_classes });
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> PairAnnotation<G> {
        PairAnnotation {
            box_a: self.box_a.cast(),
            box_b: self.box_b.cast(),
            cat_a: self.cat_a,
            cat_b: self.cat_b,
            distance: self.distance,
            occlusion: self.occlusion,
        }
    }
}
