//! Remote heart-rate estimation from facial video.
//!
//! The pipeline runs ingest -> face geometry -> spatial-temporal maps, then
//! either the classical spectral estimators in [`rppg`] or the learned
//! regressor in the `rhythmkit-nn` crate. [`synth`] provides signals and
//! frame sequences with known heart rate for end-to-end checks.

pub mod eval;
pub mod face;
pub mod ingest;
pub mod rppg;
pub mod stmap;
pub mod synth;

pub use face::LandmarkSchema;
pub use ingest::{Frame, FrameSequence, GroundTruthTrace, LandmarkTrack, Point};
pub use stmap::{BlockTraces, ClipWindow, ColorSpace, SpatialTemporalMap};
