//! Set-prediction training loss with analytic gradients.
//!
//! Gradients are taken with respect to the class logits (the inputs of the
//! softmax that produced each probability vector) and with respect to the
//! center-form box outputs of the regression heads.

use crate::geometry::BBox;
use crate::labels::{PairAnnotation, NUM_DISTANCE, NUM_OCCLUSION};
use crate::matching::{box_term, Assignment, IntersectionMode, MatchWeights};
use crate::prediction::{PredictionSet, QueryOutput};
use crate::Scalar;

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-8;

/// Gradient of the loss with respect to one query's head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrad<F> {
    pub class_a: Vec<F>,
    pub class_b: Vec<F>,
    pub box_a: [F; 4],
    pub box_b: [F; 4],
    pub distance: [F; NUM_DISTANCE],
    pub occlusion: [F; NUM_OCCLUSION],
    pub intersection: [F; 4],
}

impl<F: Scalar> QueryGrad<F> {
    pub fn zeros(num_object_logits: usize) -> Self {
        Self {
            class_a: vec![F::zero(); num_object_logits],
            class_b: vec![F::zero(); num_object_logits],
            box_a: [F::zero(); 4],
            box_b: [F::zero(); 4],
            distance: [F::zero(); NUM_DISTANCE],
            occlusion: [F::zero(); NUM_OCCLUSION],
            intersection: [F::zero(); 4],
        }
    }

    fn scale(&mut self, s: F) {
        let all = self
            .class_a
            .iter_mut()
            .chain(self.class_b.iter_mut())
            .chain(self.box_a.iter_mut())
            .chain(self.box_b.iter_mut())
            .chain(self.distance.iter_mut())
            .chain(self.occlusion.iter_mut())
            .chain(self.intersection.iter_mut());
        for v in all {
            *v *= s;
        }
    }
}

/// Loss components for one image, already weighted by the alphas but not by
/// the betas; `total` applies the betas.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<F> {
    pub class_matched: F,
    pub class_background: F,
    pub regression: F,
    /// Share of `regression` contributed by intersection boxes.
    pub regression_intersection: F,
    pub total: F,
}

impl<F: Scalar> std::ops::AddAssign for LossBreakdown<F> {
    fn add_assign(&mut self, o: Self) {
        self.class_matched += o.class_matched;
        self.class_background += o.class_background;
        self.regression += o.regression;
        self.regression_intersection += o.regression_intersection;
        self.total += o.total;
    }
}

/// `-weight * log(max(p[k], floor))`, accumulating `d/dlogits` into `grad`.
fn nll_term<F: Scalar>(p: &[F], k: usize, weight: F, grad: &mut [F]) -> F {
    let floor = F::lit(LOG_FLOOR);
    let pk = p[k];
    if pk > floor {
        for (g, (i, &pi)) in grad.iter_mut().zip(p.iter().enumerate()) {
            let onehot = if i == k { F::one() } else { F::zero() };
            *g += weight * (pi - onehot);
        }
        -weight * pk.ln()
    } else {
        -weight * floor.ln()
    }
}

/// NLL terms of a matched query for A, B, distance and occlusion.
pub fn matched_class_loss<F: Scalar>(
    g: &PairAnnotation<F>,
    p: &QueryOutput<F>,
    w: &MatchWeights<F>,
    grad: &mut QueryGrad<F>,
) -> F {
    nll_term(&p.class_a, g.cat_a, w.alpha_a, &mut grad.class_a)
        + nll_term(&p.class_b, g.cat_b, w.alpha_b, &mut grad.class_b)
        + nll_term(&p.distance, g.distance.index(), w.alpha_distance, &mut grad.distance)
        + nll_term(&p.occlusion, g.occlusion.index(), w.alpha_occlusion, &mut grad.occlusion)
}

/// Background NLL for an unmatched query, object heads only.
pub fn background_class_loss<F: Scalar>(p: &QueryOutput<F>, w: &MatchWeights<F>, grad: &mut QueryGrad<F>) -> F {
    let bg = p.background_index();
    nll_term(&p.class_a, bg, w.alpha_eos, &mut grad.class_a) + nll_term(&p.class_b, bg, w.alpha_eos, &mut grad.class_b)
}

/// `(GIoU, d GIoU / d(x_min, y_min, x_max, y_max))` of `pred` against `target`.
pub fn giou_with_grad<F: Scalar>(target: &BBox<F>, pred: &BBox<F>) -> (F, [F; 4]) {
    let zero = F::zero();
    let one = F::one();
    let [x1, y1, x2, y2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = target.corners();

    let ix = x2.min(gx2) - x1.max(gx1);
    let iy = y2.min(gy2) - y1.max(gy1);
    let (iw, ih) = (ix.max(zero), iy.max(zero));
    let inter = iw * ih;
    let (pw, ph) = (x2 - x1, y2 - y1);
    let area_p = pw * ph;
    let union = area_p + target.area() - inter;
    let cw = x2.max(gx2) - x1.min(gx1);
    let ch = y2.max(gy2) - y1.min(gy1);
    let hull = cw * ch;
    if hull <= zero || union <= zero {
        return (crate::geometry::giou(target, pred), [zero; 4]);
    }
    let value = inter / union + union / hull - one;

    let d_inter = one / union + inter / (union * union) - one / hull;
    let d_area = -inter / (union * union) + one / hull;
    let d_hull = -union / (hull * hull);

    let overlap = ix > zero && iy > zero;
    let di = |active: bool, side: F| if overlap && active { side } else { zero };
    let dc = |active: bool, side: F| if active { side } else { zero };

    let g_x1 = d_inter * di(x1 > gx1, -ih) + d_area * (-ph) + d_hull * dc(x1 < gx1, -ch);
    let g_x2 = d_inter * di(x2 < gx2, ih) + d_area * ph + d_hull * dc(x2 > gx2, ch);
    let g_y1 = d_inter * di(y1 > gy1, -iw) + d_area * (-pw) + d_hull * dc(y1 < gy1, -cw);
    let g_y2 = d_inter * di(y2 < gy2, iw) + d_area * pw + d_hull * dc(y2 > gy2, cw);
    (value, [g_x1, g_y1, g_x2, g_y2])
}

/// One box term `alpha_l1 * |g - p|_1 + alpha_giou * (1 - GIoU)` and its
/// gradient with respect to the center-form prediction.
pub fn box_loss_with_grad<F: Scalar>(target: &BBox<F>, pred: &[F; 4], w: &MatchWeights<F>) -> (F, [F; 4]) {
    let tc = target.to_center();
    let mut grad = [F::zero(); 4];
    let mut l1 = F::zero();
    for i in 0..4 {
        let diff = pred[i] - tc[i];
        l1 += diff.abs();
        grad[i] = if diff == F::zero() { F::zero() } else { w.alpha_l1 * diff.signum() };
    }
    let (giou, gc) = giou_with_grad(target, &BBox::from_center_array(*pred));
    // corners -> center: x1 = cx - w/2, x2 = cx + w/2
    let half = F::lit(0.5);
    let d_center = [gc[0] + gc[2], gc[1] + gc[3], half * (gc[2] - gc[0]), half * (gc[3] - gc[1])];
    for i in 0..4 {
        grad[i] -= w.alpha_giou * d_center[i];
    }
    (box_term(l1, giou, w), grad)
}

/// Regression terms of a matched query, summed over the supervised boxes.
/// Returns `(total, intersection share)`.
pub fn regression_loss<F: Scalar>(
    g: &PairAnnotation<F>,
    p: &QueryOutput<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
    grad: &mut QueryGrad<F>,
) -> (F, F) {
    let (la, ga) = box_loss_with_grad(&g.box_a, &p.box_a, w);
    let (lb, gb) = box_loss_with_grad(&g.box_b, &p.box_b, w);
    for i in 0..4 {
        grad.box_a[i] += ga[i];
        grad.box_b[i] += gb[i];
    }
    let mut int_part = F::zero();
    if mode.in_loss(g) {
        if let Some(pi) = &p.intersection {
            let (li, gi) = box_loss_with_grad(&g.intersection_target(), pi, w);
            for i in 0..4 {
                grad.intersection[i] += gi[i];
            }
            int_part = li;
        }
    }
    (la + lb + int_part, int_part)
}

/// Loss and per-query gradients for one image given a matching.
pub fn image_loss<F: Scalar>(
    targets: &[PairAnnotation<F>],
    predictions: &PredictionSet<F>,
    assignment: &Assignment<F>,
    w: &MatchWeights<F>,
    mode: IntersectionMode,
) -> (LossBreakdown<F>, Vec<QueryGrad<F>>) {
    let target_of = assignment.target_of(predictions.len());
    let mut out = LossBreakdown::default();
    let mut grads = Vec::with_capacity(predictions.len());
    for (q, p) in predictions.queries.iter().enumerate() {
        let mut cls = QueryGrad::zeros(p.class_a.len());
        let mut reg = QueryGrad::zeros(p.class_a.len());
        match target_of[q] {
            Some(t) => {
                out.class_matched += matched_class_loss(&targets[t], p, w, &mut cls);
                let (r, ri) = regression_loss(&targets[t], p, w, mode, &mut reg);
                out.regression += r;
                out.regression_intersection += ri;
            }
            None => out.class_background += background_class_loss(p, w, &mut cls),
        }
        cls.scale(w.beta_class);
        reg.scale(w.beta_reg);
        grads.push(merge(cls, reg));
    }
    out.total = total_loss(out.class_matched + out.class_background, out.regression, w);
    (out, grads)
}

fn merge<F: Scalar>(mut a: QueryGrad<F>, b: QueryGrad<F>) -> QueryGrad<F> {
    for (x, y) in a.class_a.iter_mut().zip(&b.class_a) {
        *x += *y;
    }
    for (x, y) in a.class_b.iter_mut().zip(&b.class_b) {
        *x += *y;
    }
    for i in 0..4 {
        a.box_a[i] += b.box_a[i];
        a.box_b[i] += b.box_b[i];
        a.intersection[i] += b.intersection[i];
        a.distance[i] += b.distance[i];
        a.occlusion[i] += b.occlusion[i];
    }
    a
}

/// `beta_class * class + beta_reg * regression`.
pub fn total_loss<F: Scalar>(class: F, regression: F, w: &MatchWeights<F>) -> F {
    w.beta_class * class + w.beta_reg * regression
}
