//! Per-query head outputs and the decoded prediction records built from them.

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::labels::{DistanceClass, OcclusionClass, NUM_DISTANCE, NUM_OCCLUSION};
use crate::Scalar;

/// Outputs of the prediction heads for a single query.
///
/// Class vectors are softmax probabilities; object class vectors carry the
/// background class as their last entry. Boxes are center form `(cx, cy, w, h)`
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput<F> {
    pub class_a: Vec<F>,
    pub class_b: Vec<F>,
    pub box_a: [F; 4],
    pub box_b: [F; 4],
    pub distance: [F; NUM_DISTANCE],
    pub occlusion: [F; NUM_OCCLUSION],
    pub intersection: Option<[F; 4]>,
}

/// All query outputs for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet<F> {
    pub queries: Vec<QueryOutput<F>>,
}

pub(crate) fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_entry<F: Scalar>(v: &[F]) -> F {
    v.iter().copied().fold(F::neg_infinity(), F::max)
}

impl<F: Scalar> QueryOutput<F> {
    /// Number of foreground object classes (background excluded).
    pub fn num_object_classes(&self) -> usize {
        self.class_a.len() - 1
    }

    pub fn background_index(&self) -> usize {
        self.num_object_classes()
    }
}

impl<F: Scalar> PredictionSet<F> {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Decode every query into a [`Prediction`] record.
    pub fn decode(&self) -> Vec<Prediction<F>> {
        self.queries.iter().enumerate().map(|(i, q)| Prediction::from_query(i, q)).collect()
    }
}

/// A decoded relationship prediction: boxes in corner form, argmax labels and
/// the confidences used for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct Prediction<F> {
    pub query: usize,
    pub box_a: BBox<F>,
    pub box_b: BBox<F>,
    /// Foreground category argmax for A and B (background excluded).
    pub cat_a: usize,
    pub cat_b: usize,
    pub distance: DistanceClass,
    pub occlusion: OcclusionClass,
    /// Relationship confidence `max(p_d) * max(p_o)`.
    pub confidence: F,
    /// Relationship confidence times the two object class confidences.
    pub object_confidence: F,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<BBox<F>>,
}

impl<F: Scalar> Prediction<F> {
    pub fn from_query(query: usize, q: &QueryOutput<F>) -> Self {
        let fg = q.num_object_classes();
        let cat_a = argmax(&q.class_a[..fg]);
        let cat_b = argmax(&q.class_b[..fg]);
        let confidence = crate::inference::confidence(&q.distance, &q.occlusion);
        Self {
            query,
            box_a: BBox::from_center_array(q.box_a),
            box_b: BBox::from_center_array(q.box_b),
            cat_a,
            cat_b,
            distance: DistanceClass::ALL[argmax(&q.distance)],
            occlusion: OcclusionClass::ALL[argmax(&q.occlusion)],
            confidence,
            object_confidence: confidence * q.class_a[cat_a] * q.class_b[cat_b],
            intersection: q.intersection.map(BBox::from_center_array),
        }
    }
}
