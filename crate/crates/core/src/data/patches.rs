//! Non-overlapping patch tiling and train/validation splitting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::raster::{Raster, SegmentationMask};
use crate::error::{Error, Result};

/// Where a patch was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub source: String,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl Provenance {
    pub fn patch_id(&self) -> String {
        format!("{}_x{}_y{}", self.source, self.offset_x, self.offset_y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedPatch {
    pub mask: SegmentationMask,
    pub image: Raster,
    pub provenance: Provenance,
}

/// Tiles both rasters on a grid anchored at the origin, row by row; partial
/// border tiles are discarded.
pub fn extract_patches(
    image: &Raster,
    mask: &SegmentationMask,
    patch_size: usize,
    source: &str,
) -> Result<Vec<PairedPatch>> {
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::shape(
            "extract_patches",
            format!(
                "image {}x{} vs mask {}x{}",
                image.width, image.height, mask.width, mask.height
            ),
        ));
    }
    if image.width < patch_size || image.height < patch_size {
        warn!(
            "{source}: raster {}x{} smaller than patch size {patch_size}; no patches",
            image.width, image.height
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for ty in 0..image.height / patch_size {
        for tx in 0..image.width / patch_size {
            let (x, y) = (tx * patch_size, ty * patch_size);
            out.push(PairedPatch {
                mask: mask.crop(x, y, patch_size, patch_size),
                image: image.crop(x, y, patch_size, patch_size),
                provenance: Provenance {
                    source: source.to_string(),
                    offset_x: x,
                    offset_y: y,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub patch_id: String,
    pub provenance: Provenance,
    pub split: Split,
}

/// Patch records in extraction order with their split assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

pub const MANIFEST_HEADER: &str = "patch_id,source,offset_x,offset_y,split";

/// Number of training items for `n` items at `ratio`: `floor(n·ratio)`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    // tolerance absorbs products like 0.9·30 that land just below an integer
    (n as f64 * ratio + 1e-9).floor() as usize
}

/// Shuffles indices with `seed` and sends the first `floor(n·ratio)` of the
/// permutation to training, the rest to validation.
pub fn split_dataset(records: &[Provenance], ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Validation; records.len()];
    for &i in &order[..train_count(records.len(), ratio)] {
        split[i] = Split::Train;
    }
    let entries = records
        .iter()
        .zip(split)
        .map(|(p, split)| ManifestEntry {
            patch_id: p.patch_id(),
            provenance: p.clone(),
            split,
        })
        .collect();
    Ok(DatasetManifest { entries, seed })
}

impl DatasetManifest {
    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.of_split(split).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.patch_id,
                e.provenance.source,
                e.provenance.offset_x,
                e.provenance.offset_y,
                e.split.as_str()
            );
        }
        s
    }

    /// Parses the line-oriented manifest. The seed is not stored in the file.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut offset = 0u64;
        let mut entries = Vec::new();
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let at = offset;
            offset += line.len() as u64;
            let line = line.trim_end_matches(['\n', '\r']);
            let bad = |detail: String| Error::Malformed {
                path: path.to_path_buf(),
                offset: at,
                detail: format!("line {}: {detail}", i + 1),
            };
            if i == 0 {
                if line != MANIFEST_HEADER {
                    return Err(bad(format!("expected header {MANIFEST_HEADER:?}")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("{} fields, expected 5", f.len())));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("bad offset {s:?}")))
            };
            let split = match f[4] {
                "train" => Split::Train,
                "val" => Split::Validation,
                other => return Err(bad(format!("unknown split {other:?}"))),
            };
            entries.push(ManifestEntry {
                patch_id: f[0].to_string(),
                provenance: Provenance {
                    source: f[1].to_string(),
                    offset_x: num(f[2])?,
                    offset_y: num(f[3])?,
                },
                split,
            });
        }
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { entries, seed: 0 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
