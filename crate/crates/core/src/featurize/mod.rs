//! The two views of a segment: a 48-dim statistical summary and a
//! 4-channel motion sequence, plus GPS-style augmentations and the
//! training-set standardizer.

mod augment;
mod sequence;
mod standardize;
mod stats;

pub use augment::{augment, AugmentationPolicy};
pub use sequence::{motion_sequence, subsample_indices, DualView, SEQ_CHANNELS};
pub use standardize::{fit_standardizer, Standardizer, STD_FLOOR};
pub use stats::{stat_features, FEATURE_DIM, FEATURE_LAYOUT_VERSION, FEATURE_NAMES};
