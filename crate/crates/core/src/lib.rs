//! Uncertainty-guided space-time patch segmentation of dynamic image series.
//!
//! A pool of patch-level segmenters analyses each case through a sliding
//! space-time window; disagreement between overlapping windows yields a
//! pixel-wise uncertainty map, and the pool member with the lowest mean
//! per-pixel uncertainty energy is selected per case.

pub mod components;
pub mod distance;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod patching;
pub mod perfusion;
pub mod preprocess;
pub mod rng;
pub mod segmenters;
pub mod selection;
pub mod synth;
pub mod tensor;
pub mod types;

pub use error::{BackendError, Error, Result};
pub use types::{Class, ClassProbabilityMap, ImageSeries, LabelMask, SegmentationSolution, UncertaintyMap};
