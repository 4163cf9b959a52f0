//! Building blocks for a gated PET/CT lesion segmentation pipeline.
//!
//! A PET volume is projected (with and without its brain uptake) and scored by
//! an ensemble of eight MIP classifiers; if every classifier calls the case
//! healthy the segmentation is skipped. Otherwise the probability maps of the
//! segmentation models are averaged, thresholded and cleaned up. The
//! [`metrics`] module scores the result the way the lesion segmentation
//! challenge does (Dice, false positive and false negative volume).

pub mod components;
pub mod error;
pub mod gating;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod projection;
pub mod report;
pub mod splits;
pub mod volume;

pub use components::{component_volumes, label_components, ComponentMap, Connectivity};
pub use error::{Error, ErrorKind, Result};
pub use volume::{BinaryMask, Dims, ProbabilityVolume, Spacing, Volume3D};
