//! Core math for detecting relative occlusion and relative distance between
//! object pairs with a set-prediction model.
//!
//! Everything here is generic over a floating point [`Scalar`] so the same
//! code paths run in `f32` for training and in `f64` for oracle checks.
//! Concrete aliases for both widths live at the crate root.

pub mod evaluation;
pub mod geometry;
pub mod inference;
pub mod labels;
pub mod loss;
pub mod matching;
pub mod prediction;
pub mod scalar;

pub use geometry::{BBox, GeometryError};
pub use labels::{DistanceClass, LabelError, OcclusionClass, PairAnnotation, NUM_DISTANCE, NUM_OCCLUSION};
pub use matching::{Assignment, MatchWeights, MatchingError};
pub use prediction::{Prediction, PredictionSet, QueryOutput};
pub use scalar::Scalar;

pub type BBox32 = BBox<f32>;
pub type BBox64 = BBox<f64>;
pub type PairAnnotation32 = PairAnnotation<f32>;
pub type PairAnnotation64 = PairAnnotation<f64>;
pub type QueryOutput32 = QueryOutput<f32>;
pub type QueryOutput64 = QueryOutput<f64>;
pub type PredictionSet32 = PredictionSet<f32>;
pub type PredictionSet64 = PredictionSet<f64>;
pub type Prediction32 = Prediction<f32>;
pub type Prediction64 = Prediction<f64>;
pub type MatchWeights32 = MatchWeights<f32>;
pub type MatchWeights64 = MatchWeights<f64>;
