//! Compositional video conditioning at desk scale.
//!
//! Camera and placement-box geometry, bbox-grounded rotary embeddings,
//! motion cross-attention, masked rectified-flow training and a small
//! velocity transformer. Numeric code is generic over [`Scalar`]; the
//! aliases below fix it to `f32` or `f64`.

pub mod conditioning;
pub mod error;
pub mod flowmatch;
pub mod geometry;
pub mod nn;
pub mod rope;
pub mod scalar;
pub mod toymodel;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

pub type ToyModelF32 = toymodel::ToyModel<f32>;
pub type ToyModelF64 = toymodel::ToyModel<f64>;
pub type TrainStateF32 = toymodel::TrainState<f32>;
pub type TrainStateF64 = toymodel::TrainState<f64>;
pub type ContextSequenceF32 = conditioning::ContextSequence<f32>;
pub type ContextSequenceF64 = conditioning::ContextSequence<f64>;
pub type PlacementTrackF32 = geometry::PlacementTrack<f32>;
pub type PlacementTrackF64 = geometry::PlacementTrack<f64>;
pub type CameraPoseF64 = geometry::CameraPose<f64>;
pub type CameraIntrinsicsF64 = geometry::CameraIntrinsics<f64>;
