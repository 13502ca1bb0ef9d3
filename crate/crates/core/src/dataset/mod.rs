//! Patch tiling, train/test splitting, class weighting and Hann-blended
//! reconstruction of full scenes from overlapping patches.

mod hann;
mod merge;
mod patch;
mod store;
mod weights;

pub use hann::{hann_1d, hann_window, HannWindow, HANN_FLOOR};
pub use merge::merge_patches;
pub use patch::{axis_offsets, patchify, split, Patch, PatchGrid, PatchSet, Split};
pub use store::{read_patchset, write_patchset, Manifest, PatchEntry, MANIFEST};
pub use weights::{class_weights, weights_from_counts, ClassWeights};
