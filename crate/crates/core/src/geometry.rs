//! Axis-aligned box algebra in normalized image coordinates.
//!
//! Boxes are stored in corner form. Center form `(cx, cy, w, h)` is what the
//! regression heads emit and what the L1 terms compare.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box coordinate is not finite: {0:?}")]
    NotFinite([f64; 4]),
    #[error("inverted box: min {min} > max {max} on the {axis} axis")]
    Inverted { axis: char, min: f64, max: f64 },
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct BBox<F> {
    pub x_min: F,
    pub y_min: F,
    pub x_max: F,
    pub y_max: F,
}

impl<F: Scalar> BBox<F> {
    /// Validated constructor for boxes coming from outside the process.
    /// Coordinates are clamped to `[0, 1]` after the ordering check.
    pub fn new(x_min: F, y_min: F, x_max: F, y_max: F) -> Result<Self, GeometryError> {
        let raw = [x_min, y_min, x_max, y_max];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotFinite(raw.map(Scalar::as_f64)));
        }
        if x_min > x_max {
            return Err(GeometryError::Inverted { axis: 'x', min: x_min.as_f64(), max: x_max.as_f64() });
        }
        if y_min > y_max {
            return Err(GeometryError::Inverted { axis: 'y', min: y_min.as_f64(), max: y_max.as_f64() });
        }
        Ok(Self::from_corners(x_min, y_min, x_max, y_max).clamped())
    }

    /// Unchecked, unclamped corner constructor for interior math.
    #[inline]
    pub const fn from_corners(x_min: F, y_min: F, x_max: F, y_max: F) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    #[inline]
    pub fn from_center(cx: F, cy: F, w: F, h: F) -> Self {
        let half = F::lit(0.5);
        Self::from_corners(cx - half * w, cy - half * h, cx + half * w, cy + half * h)
    }

    #[inline]
    pub fn from_center_array(c: [F; 4]) -> Self {
        Self::from_center(c[0], c[1], c[2], c[3])
    }

    /// `(cx, cy, w, h)`.
    #[inline]
    pub fn to_center(&self) -> [F; 4] {
        let half = F::lit(0.5);
        [
            half * (self.x_min + self.x_max),
            half * (self.y_min + self.y_max),
            self.x_max - self.x_min,
            self.y_max - self.y_min,
        ]
    }

    #[inline]
    pub fn corners(&self) -> [F; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn clamped(&self) -> Self {
        let c = |v: F| v.max(F::zero()).min(F::one());
        Self::from_corners(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }

    #[inline]
    pub fn width(&self) -> F {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> F {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> F {
        self.width().max(F::zero()) * self.height().max(F::zero())
    }

    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.area() <= F::zero()
    }

    /// Area of the literal overlap, zero when disjoint.
    #[inline]
    pub fn intersection_area(&self, other: &Self) -> F {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(F::zero()) * h.max(F::zero())
    }

    /// Literal intersection rectangle, `None` when the boxes do not overlap
    /// with positive area.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let b = Self::from_corners(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (b.width() > F::zero() && b.height() > F::zero()).then_some(b)
    }

    /// Smallest box enclosing both.
    #[inline]
    pub fn hull(&self, other: &Self) -> Self {
        Self::from_corners(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    /// Mirror across the vertical center line (`x -> 1 - x`).
    pub fn flip_horizontal(&self) -> Self {
        let one = F::one();
        Self::from_corners(one - self.x_max, self.y_min, one - self.x_min, self.y_max)
    }

    pub fn cast<G: Scalar>(&self) -> BBox<G> {
        BBox::from_corners(
            G::lit(self.x_min.as_f64()),
            G::lit(self.y_min.as_f64()),
            G::lit(self.x_max.as_f64()),
            G::lit(self.y_max.as_f64()),
        )
    }
}

impl<F: Scalar> From<BBox<F>> for [f64; 4] {
    fn from(b: BBox<F>) -> Self {
        b.corners().map(Scalar::as_f64)
    }
}

impl<F: Scalar> TryFrom<[f64; 4]> for BBox<F> {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(F::lit(c[0]), F::lit(c[1]), F::lit(c[2]), F::lit(c[3]))
    }
}

/// Intersection over union. Zero whenever the union has no area, which
/// includes two identical degenerate boxes.
pub fn iou<F: Scalar>(a: &BBox<F>, b: &BBox<F>) -> F {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= F::zero() {
        return F::zero();
    }
    inter / union
}

/// Generalized IoU: `iou - (hull - union) / hull`. Zero when the hull has no
/// area (both boxes degenerate and collinear or coincident).
pub fn giou<F: Scalar>(a: &BBox<F>, b: &BBox<F>) -> F {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= F::zero() {
        return F::zero();
    }
    let iou = if union > F::zero() { inter / union } else { F::zero() };
    iou - (hull - union) / hull
}

#[inline]
fn middle_two<F: Scalar>(mut v: [F; 4]) -> (F, F) {
    v.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
    (v[1], v[2])
}

/// The box spanned by the second and third smallest coordinates on each axis.
///
/// Overlapping boxes give their literal intersection, nested boxes give the
/// inner box, and disjoint boxes give the gap-spanning box between them.
pub fn generalized_intersection_box<F: Scalar>(a: &BBox<F>, b: &BBox<F>) -> BBox<F> {
    let (x_min, x_max) = middle_two([a.x_min, a.x_max, b.x_min, b.x_max]);
    let (y_min, y_max) = middle_two([a.y_min, a.y_max, b.y_min, b.y_max]);
    BBox::from_corners(x_min, y_min, x_max, y_max)
}
