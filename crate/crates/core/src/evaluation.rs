//! Precision / recall / F1 under the n-leak relationship detection protocol.
//!
//! A prediction is a correct detection when both of its boxes overlap the
//! ground-truth boxes with IoU above 0.5; object categories are ignored. Per
//! image, predictions are walked in descending confidence and each
//! ground-truth pair can be claimed once. Later predictions that would claim
//! an already matched pair are false positives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::iou;
use crate::inference::{sort_by_confidence, RankBy};
use crate::labels::{DistanceClass, OcclusionClass, PairAnnotation};
use crate::prediction::Prediction;
use crate::Scalar;

pub const DETECTION_IOU: f64 = 0.5;
pub const GOOD_DETECTION_IOU: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("image {0} has predictions but no ground truth")]
    MissingGroundTruth(String),
    #[error("image {0} has ground truth but no prediction entry")]
    MissingPredictions(String),
}

pub fn is_correct_detection<F: Scalar>(p: &Prediction<F>, g: &PairAnnotation<F>) -> bool {
    let thr = F::lit(DETECTION_IOU);
    iou(&p.box_a, &g.box_a) > thr && iou(&p.box_b, &g.box_b) > thr
}

/// Correct detection with both relationship predicates right.
pub fn is_correct_prediction<F: Scalar>(p: &Prediction<F>, g: &PairAnnotation<F>) -> bool {
    is_correct_detection(p, g) && p.distance == g.distance && p.occlusion == g.occlusion
}

/// Which predicate a metric scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Distance,
    Occlusion,
    /// Both predicates must be right.
    Both,
}

impl Task {
    fn correct<F: Scalar>(self, p: &Prediction<F>, g: &PairAnnotation<F>) -> bool {
        is_correct_detection(p, g)
            && match self {
                Task::Distance => p.distance == g.distance,
                Task::Occlusion => p.occlusion == g.occlusion,
                Task::Both => p.distance == g.distance && p.occlusion == g.occlusion,
            }
    }

    fn class_of_pred<F>(self, p: &Prediction<F>) -> Option<usize> {
        match self {
            Task::Distance => Some(p.distance.index()),
            Task::Occlusion => Some(p.occlusion.index()),
            Task::Both => None,
        }
    }

    fn class_of_gt<F>(self, g: &PairAnnotation<F>) -> Option<usize> {
        match self {
            Task::Distance => Some(g.distance.index()),
            Task::Occlusion => Some(g.occlusion.index()),
            Task::Both => None,
        }
    }

    fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::Distance => DistanceClass::ALL.iter().map(|c| c.name()).collect(),
            Task::Occlusion => OcclusionClass::ALL.iter().map(|c| c.name()).collect(),
            Task::Both => Vec::new(),
        }
    }
}

/// Guarded ratio: zero when the denominator is zero.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: usize,
    /// Predictions carrying this label.
    pub predicted: usize,
    /// Ground-truth pairs carrying this label.
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub num_images: usize,
    pub num_predictions: usize,
    pub distance: TaskMetrics,
    pub occlusion: TaskMetrics,
    pub both: TaskMetrics,
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fp: usize,
    gt: usize,
    class_tp: Vec<usize>,
    class_pred: Vec<usize>,
    class_gt: Vec<usize>,
}

impl Counts {
    fn new(classes: usize) -> Self {
        Self { class_tp: vec![0; classes], class_pred: vec![0; classes], class_gt: vec![0; classes], ..Self::default() }
    }

    fn finish(self, task: Task) -> TaskMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.gt);
        let per_class = task
            .class_names()
            .into_iter()
            .enumerate()
            .map(|(c, name)| {
                let p = ratio(self.class_tp[c], self.class_pred[c]);
                let r = ratio(self.class_tp[c], self.class_gt[c]);
                ClassMetrics {
                    class: name.to_string(),
                    tp: self.class_tp[c],
                    predicted: self.class_pred[c],
                    support: self.class_gt[c],
                    precision: p,
                    recall: r,
                    f1: f1(p, r),
                }
            })
            .collect();
        TaskMetrics { task, tp: self.tp, fp: self.fp, num_gt: self.gt, precision, recall, f1: f1(precision, recall), per_class }
    }
}

fn min_iou<F: Scalar>(p: &Prediction<F>, g: &PairAnnotation<F>) -> F {
    iou(&p.box_a, &g.box_a).min(iou(&p.box_b, &g.box_b))
}

/// Greedy first-match accounting for one image; `preds` must already be in
/// confidence order. Returns the TP flag of every prediction.
fn match_image<F: Scalar>(task: Task, preds: &[Prediction<F>], gts: &[PairAnnotation<F>]) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, F)> = None;
            for (i, g) in gts.iter().enumerate() {
                if claimed[i] || !task.correct(p, g) {
                    continue;
                }
                let score = min_iou(p, g);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((i, score));
                }
            }
            if let Some((i, _)) = best {
                claimed[i] = true;
            }
            best.is_some()
        })
        .collect()
}

fn check_ids<P, G>(preds: &BTreeMap<String, P>, gts: &BTreeMap<String, G>) -> Result<(), EvalError> {
    if let Some(id) = preds.keys().find(|k| !gts.contains_key(*k)) {
        return Err(EvalError::MissingGroundTruth(id.clone()));
    }
    if let Some(id) = gts.keys().find(|k| !preds.contains_key(*k)) {
        return Err(EvalError::MissingPredictions(id.clone()));
    }
    Ok(())
}

/// Dataset-level micro precision, recall and F1 for distance, occlusion and
/// the joint criterion, with per-class breakdowns.
///
/// Predictions per image are expected to be the n-leak selection; their input
/// order does not matter since they are re-ranked by confidence here.
pub fn evaluate<F: Scalar>(
    predictions: &BTreeMap<String, Vec<Prediction<F>>>,
    ground_truth: &BTreeMap<String, Vec<PairAnnotation<F>>>,
) -> Result<Metrics, EvalError> {
    check_ids(predictions, ground_truth)?;
    let tasks = [Task::Distance, Task::Occlusion, Task::Both];
    let mut counts: Vec<Counts> = tasks.iter().map(|t| Counts::new(t.class_names().len())).collect();
    let mut num_predictions = 0;
    for (id, gts) in ground_truth {
        let mut preds = predictions[id].clone();
        sort_by_confidence(&mut preds, RankBy::Relationship);
        num_predictions += preds.len();
        for (task, c) in tasks.iter().zip(counts.iter_mut()) {
            let flags = match_image(*task, &preds, gts);
            c.gt += gts.len();
            for g in gts {
                if let Some(k) = task.class_of_gt(g) {
                    c.class_gt[k] += 1;
                }
            }
            for (p, &tp) in preds.iter().zip(&flags) {
                if tp {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
                if let Some(k) = task.class_of_pred(p) {
                    c.class_pred[k] += 1;
                    c.class_tp[k] += tp as usize;
                }
            }
        }
    }
    let mut it = counts.into_iter().zip(tasks).map(|(c, t)| c.finish(t));
    Ok(Metrics {
        num_images: ground_truth.len(),
        num_predictions,
        distance: it.next().expect("distance"),
        occlusion: it.next().expect("occlusion"),
        both: it.next().expect("both"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrecision {
    pub class: String,
    pub correct: usize,
    pub predicted: usize,
    /// `None` when no selected prediction carries this label.
    pub precision: Option<f64>,
}

/// Relationship precision restricted to well-localized predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodDetectionTable {
    pub iou_threshold: f64,
    pub selected: usize,
    pub distance: Vec<ClassPrecision>,
    pub occlusion: Vec<ClassPrecision>,
}

/// Keep predictions whose boxes both exceed `iou_threshold` against their
/// best-overlapping ground-truth pair and report per-class precision of the
/// relationship labels among them.
pub fn good_detection_precision<F: Scalar>(
    predictions: &BTreeMap<String, Vec<Prediction<F>>>,
    ground_truth: &BTreeMap<String, Vec<PairAnnotation<F>>>,
    iou_threshold: f64,
) -> Result<GoodDetectionTable, EvalError> {
    check_ids(predictions, ground_truth)?;
    let thr = F::lit(iou_threshold);
    let mut dist = [(0usize, 0usize); 4];
    let mut occl = [(0usize, 0usize); 4];
    let mut selected = 0;
    for (id, gts) in ground_truth {
        for p in &predictions[id] {
            let best = gts
                .iter()
                .map(|g| (min_iou(p, g), g))
                .fold(None, |acc: Option<(F, &PairAnnotation<F>)>, (s, g)| match acc {
                    Some((bs, _)) if bs >= s => acc,
                    _ => Some((s, g)),
                });
            let Some((score, g)) = best else { continue };
            if score <= thr {
                continue;
            }
            selected += 1;
            let d = &mut dist[p.distance.index()];
            d.1 += 1;
            d.0 += (p.distance == g.distance) as usize;
            let o = &mut occl[p.occlusion.index()];
            o.1 += 1;
            o.0 += (p.occlusion == g.occlusion) as usize;
        }
    }
    let table = |counts: [(usize, usize); 4], names: Vec<&'static str>| {
        counts
            .iter()
            .zip(names)
            .map(|(&(correct, predicted), name)| ClassPrecision {
                class: name.to_string(),
                correct,
                predicted,
                precision: (predicted > 0).then(|| correct as f64 / predicted as f64),
            })
            .collect()
    };
    Ok(GoodDetectionTable {
        iou_threshold,
        selected,
        distance: table(dist, Task::Distance.class_names()),
        occlusion: table(occl, Task::Occlusion.class_names()),
    })
}
