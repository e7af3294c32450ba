//! Bipartite assignment of ground-truth pairs to predicted queries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{giou, BBox};
use crate::labels::PairAnnotation;
use crate::prediction::{PredictionSet, QueryOutput};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MatchingError {
    #[error("{targets} targets cannot be matched injectively into {queries} queries")]
    TooManyTargets { targets: usize, queries: usize },
    #[error("ground-truth class {class} out of range for a {len}-way head")]
    ClassOutOfRange { class: usize, len: usize },
    #[error("cost matrix row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
}

/// Matching and loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"), default, deny_unknown_fields)]
pub struct MatchWeights<F> {
    pub beta_class: F,
    pub beta_reg: F,
    pub alpha_a: F,
    pub alpha_b: F,
    pub alpha_distance: F,
    pub alpha_occlusion: F,
    pub alpha_l1: F,
    pub alpha_giou: F,
    pub alpha_eos: F,
}

impl<F: Scalar> Default for MatchWeights<F> {
    fn default() -> Self {
        Self {
            beta_class: F::lit(1.2),
            beta_reg: F::lit(1.0),
            alpha_a: F::lit(1.0),
            alpha_b: F::lit(1.0),
            alpha_distance: F::lit(2.0),
            alpha_occlusion: F::lit(2.0),
            alpha_l1: F::lit(5.0),
            alpha_giou: F::lit(2.0),
            alpha_eos: F::lit(0.02),
        }
    }
}

impl<F: Scalar> MatchWeights<F> {
    pub fn cast<G: Scalar>(&self) -> MatchWeights<G> {
        let c = |v: F| G::lit(v.as_f64());
        MatchWeights {
            beta_class: c(self.beta_class),
            beta_reg: c(self.beta_reg),
            alpha_a: c(self.alpha_a),
            alpha_b: c(self.alpha_b),
            alpha_distance: c(self.alpha_distance),
            alpha_occlusion: c(self.alpha_occlusion),
            alpha_l1: c(self.alpha_l1),
            alpha_giou: c(self.alpha_giou),
            alpha_eos: c(self.alpha_eos),
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.beta_class,
            self.beta_reg,
            self.alpha_a,
            self.alpha_b,
            self.alpha_distance,
            self.alpha_occlusion,
            self.alpha_l1,
            self.alpha_giou,
            self.alpha_eos,
        ]
        .iter()
        .all(|w| w.is_finite() && *w >= F::zero())
    }
}

/// How the intersection box participates in cost and loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntersectionMode {
    /// The model predicts a generalized intersection box at all.
    pub git: bool,
    /// The box is also supervised for pairs whose boxes do not overlap.
    /// When false the matcher ignores intersection costs entirely.
    pub pini: bool,
}

impl IntersectionMode {
    pub const FULL: Self = Self { git: true, pini: true };
    pub const OFF: Self = Self { git: false, pini: false };

    pub(crate) fn in_cost(self) -> bool {
        self.git && self.pini
    }

    pub(crate) fn in_loss(self, target: &PairAnnotation<impl Scalar>) -> bool {
        self.git && (self.pini || target.boxes_intersect())
    }
}

fn prob_at<F: Scalar>(p: &[F], k: usize) -> Result<F, MatchingError> {
    p.get(k).copied().ok_or(MatchingError::ClassOutOfRange { class: k, len: p.len() })
}

/// Normalized weighted sum of `1 - p_i[k_i]` over the A, B, distance and
/// occlusion heads.
pub fn classification_cost<F: Scalar>(
    g: &PairAnnotation<F>,
    p: &QueryOutput<F>,
    w: &MatchWeights<F>,
) -> Result<F, MatchingError> {
    let terms = [
        (w.alpha_a, prob_at(&p.class_a, g.cat_a)?),
        (w.alpha_b, prob_at(&p.class_b, g.cat_b)?),
        (w.alpha_distance, p.distance[g.distance.index()]),
        (w.alpha_occlusion, p.occlusion[g.occlusion.index()]),
    ];
    let norm: F = terms.iter().map(|t| t.0).sum();
    if norm <= F::zero() {
        return Ok(F::zero());
    }
    let num: F = terms.iter().map(|&(a, prob)| a * (F::one() - prob)).sum();
    Ok(num / norm)
}

/// `alpha_l1 * l1 + alpha_giou * (1 - giou)`.
#[inline]
pub fn box_term<F: Scalar>(l1: F, giou: F, w: &MatchWeights<F>) -> F {
    w.alpha_l1 * l1 + w.alpha_giou * (F::one() - giou)
}

/// [`box_term`] of a center-form prediction against a target box, with the
/// L1 distance taken between center-form four-vectors.
pub fn box_cost<F: Scalar>(target: &BBox<F>, pred_center: &[F; 4], w: &MatchWeights<F>) -> F {
    let tc = target.to_center();
    let l1: F = tc.iter().zip(pred_center).map(|(a, b)| (*a - *b).abs()).sum();
    box_term(l1, giou(target, &BBox::from_center_array(*pred_center)), w)
}

/// Box regression cost averaged over the object boxes and, when it takes
/// part in matching, the intersection box.
pub fn regression_cost<F: Scalar>(
    g: &PairAnnotation<F>,
    p: &QueryOutput<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
) -> F {
    let mut total = box_cost(&g.box_a, &p.box_a, w) + box_cost(&g.box_b, &p.box_b, w);
    let mut count = 2;
    if mode.in_cost() {
        if let Some(pi) = &p.intersection {
            total += box_cost(&g.intersection_target(), pi, w);
            count += 1;
        }
    }
    total / F::from_count(count)
}

pub fn pair_cost<F: Scalar>(
    g: &PairAnnotation<F>,
    p: &QueryOutput<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
) -> Result<F, MatchingError> {
    Ok(w.beta_class * classification_cost(g, p, w)? + w.beta_reg * regression_cost(g, p, w, mode))
}

/// Targets × queries cost matrix.
pub fn cost_matrix<F: Scalar>(
    targets: &[PairAnnotation<F>],
    predictions: &PredictionSet<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
) -> Result<Vec<Vec<F>>, MatchingError> {
    targets
        .iter()
        .map(|g| predictions.queries.iter().map(|p| pair_cost(g, p, w, mode)).collect())
        .collect()
}

/// Injective map from targets to queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<F> {
    /// `query_of[t]` is the query matched to target `t`.
    pub query_of: Vec<usize>,
    pub total_cost: F,
}

impl<F: Scalar> Assignment<F> {
    /// Per-query target index, `None` for unmatched queries.
    pub fn target_of(&self, num_queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_queries];
        for (t, &q) in self.query_of.iter().enumerate() {
            out[q] = Some(t);
        }
        out
    }
}

/// Minimum-cost injective assignment of rows to columns (rows ≤ columns),
/// shortest augmenting path with potentials, `O(rows² · cols)`.
///
/// Column scans run in ascending order with strict comparisons, so a single
/// row always takes the lowest-index column among its minima.
pub fn solve_assignment<F: Scalar>(cost: &[Vec<F>]) -> Result<Assignment<F>, MatchingError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment { query_of: Vec::new(), total_cost: F::zero() });
    }
    let m = cost[0].len();
    for (row, r) in cost.iter().enumerate() {
        if r.len() != m {
            return Err(MatchingError::Ragged { row, len: r.len(), expected: m });
        }
    }
    if n > m {
        return Err(MatchingError::TooManyTargets { targets: n, queries: m });
    }

    // 1-based rows/columns, column 0 is the virtual root.
    let inf = F::infinity();
    let mut u = vec![F::zero(); n + 1];
    let mut v = vec![F::zero(); m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut query_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] > 0 {
            query_of[row_of[j] - 1] = j - 1;
        }
    }
    let total_cost = query_of.iter().enumerate().map(|(t, &q)| cost[t][q]).sum();
    Ok(Assignment { query_of, total_cost })
}

/// Optimal assignment of `targets` to the queries of `predictions` under the
/// composite pair cost.
pub fn hungarian_match<F: Scalar>(
    targets: &[PairAnnotation<F>],
    predictions: &PredictionSet<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
) -> Result<Assignment<F>, MatchingError> {
    if targets.len() > predictions.len() {
        return Err(MatchingError::TooManyTargets { targets: targets.len(), queries: predictions.len() });
    }
    solve_assignment(&cost_matrix(targets, predictions, w, mode)?)
}
