//! Masks and rasters, patch extraction, dataset splitting, and synthetic
//! scenes.

pub mod dataset;
pub mod patches;
pub mod raster;
pub mod synth;

pub use patches::{
    extract_patches, split_dataset, DatasetManifest, ManifestEntry, PairedPatch, Provenance, Split,
};
pub use raster::{BitDepth, Raster, SegmentationMask, GLACIER, OCEAN};
pub use synth::synth_scene;
