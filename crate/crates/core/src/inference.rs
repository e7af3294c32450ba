//! Confidence ranking, duplicate suppression and n-leak selection.

use std::cmp::Ordering;

use thiserror::Error;

use crate::geometry::iou;
use crate::prediction::{max_entry, Prediction};
use crate::Scalar;

/// Both object boxes must overlap their counterparts by more than this for
/// two predictions to count as duplicates.
pub const DUPLICATE_IOU: f64 = 0.7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("the number of annotated objects must be at least 1, got {0}")]
    NoObjects(usize),
}

/// Ranking key used when ordering predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankBy {
    /// `max(p_d) * max(p_o)`.
    #[default]
    Relationship,
    /// Relationship confidence times both object class confidences, used for
    /// picking queries to visualize.
    RelationshipAndObjects,
}

impl RankBy {
    fn key<F: Scalar>(self, p: &Prediction<F>) -> F {
        match self {
            RankBy::Relationship => p.confidence,
            RankBy::RelationshipAndObjects => p.object_confidence,
        }
    }
}

/// `max(p_d) * max(p_o)`.
pub fn confidence<F: Scalar>(distance: &[F], occlusion: &[F]) -> F {
    max_entry(distance) * max_entry(occlusion)
}

/// Two predictions are duplicates when both boxes overlap strictly above
/// [`DUPLICATE_IOU`] and the categories and both relationship labels agree.
pub fn is_duplicate<F: Scalar>(p1: &Prediction<F>, p2: &Prediction<F>) -> bool {
    let thr = F::lit(DUPLICATE_IOU);
    p1.cat_a == p2.cat_a
        && p1.cat_b == p2.cat_b
        && p1.distance == p2.distance
        && p1.occlusion == p2.occlusion
        && iou(&p1.box_a, &p2.box_a) > thr
        && iou(&p1.box_b, &p2.box_b) > thr
}

/// Sort by descending key, ties by ascending query index.
pub fn sort_by_confidence<F: Scalar>(preds: &mut [Prediction<F>], rank: RankBy) {
    preds.sort_by(|a, b| {
        rank.key(b).partial_cmp(&rank.key(a)).unwrap_or(Ordering::Equal).then(a.query.cmp(&b.query))
    });
}

/// Greedy duplicate removal in confidence order; the output is sorted by
/// descending confidence.
pub fn nms<F: Scalar>(mut preds: Vec<Prediction<F>>) -> Vec<Prediction<F>> {
    nms_ranked(&mut preds, RankBy::Relationship);
    preds
}

pub fn nms_ranked<F: Scalar>(preds: &mut Vec<Prediction<F>>, rank: RankBy) {
    sort_by_confidence(preds, rank);
    let mut kept: Vec<Prediction<F>> = Vec::with_capacity(preds.len());
    for p in preds.drain(..) {
        if !kept.iter().any(|k| is_duplicate(k, &p)) {
            kept.push(p);
        }
    }
    *preds = kept;
}

/// Keep the top `min(n (n - 1), N)` of an already suppressed, sorted list,
/// where `n` is the number of annotated objects.
pub fn select_for_eval<F: Scalar>(preds: &[Prediction<F>], n: usize) -> Result<Vec<Prediction<F>>, InferenceError> {
    if n < 1 {
        return Err(InferenceError::NoObjects(n));
    }
    let k = (n * (n - 1)).min(preds.len());
    Ok(preds[..k].to_vec())
}
