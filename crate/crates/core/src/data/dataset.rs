//! On-disk dataset layout: a manifest next to a `patches/` directory holding
//! `{patch_id}_mask.png` and `{patch_id}_image.png`.

use std::path::{Path, PathBuf};

use crate::data::patches::{DatasetManifest, PairedPatch, Split};
use crate::data::raster::{Raster, SegmentationMask};
use crate::error::{Error, Result};
use crate::metrics::ImagePair;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PATCH_DIR: &str = "patches";

pub fn mask_path(root: &Path, patch_id: &str) -> PathBuf {
    root.join(PATCH_DIR).join(format!("{patch_id}_mask.png"))
}

pub fn image_path(root: &Path, patch_id: &str) -> PathBuf {
    root.join(PATCH_DIR).join(format!("{patch_id}_image.png"))
}

pub fn save_patch(root: &Path, patch: &PairedPatch) -> Result<()> {
    let id = patch.provenance.patch_id();
    patch.mask.save(&mask_path(root, &id))?;
    patch.image.save(&image_path(root, &id))
}

/// Builds the generator-facing pair (both tensors in `[−1, 1]`).
pub fn to_image_pair(mask: &SegmentationMask, image: &Raster) -> Result<ImagePair> {
    if (mask.width, mask.height) != (image.width, image.height) {
        return Err(Error::shape(
            "pair",
            format!(
                "mask {}x{} vs image {}x{}",
                mask.width, mask.height, image.width, image.height
            ),
        ));
    }
    Ok(ImagePair {
        mask: mask.to_signed_tensor(),
        target: image.to_signed_tensor(),
    })
}

/// Loads every pair of one split, in manifest order. `root` is the
/// directory containing the manifest.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<ImagePair>> {
    manifest
        .of_split(split)
        .map(|e| {
            let mask = SegmentationMask::load(&mask_path(root, &e.patch_id))?;
            let image = Raster::load(&image_path(root, &e.patch_id))?;
            to_image_pair(&mask, &image)
        })
        .collect()
}
