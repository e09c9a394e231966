use std::fs;
use std::path::{Path, PathBuf};

use glacier_cgan::data::dataset::{save_patch, MANIFEST_FILE, PATCH_DIR};
use glacier_cgan::data::{extract_patches, split_dataset, synth_scene, Split};
use glacier_cgan::metrics::sample_rng;
use glacier_cgan::Error;
use log::{info, warn};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

pub const CONFIG_FILE: &str = "synth.config";
pub const SCENE_DIR: &str = "scenes";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthArgs {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub train_ratio: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn defaults(root: &Path) -> RunConfig {
    RunConfig::new(
        "synth-data",
        vec![
            ("scenes", "8".into()),
            ("width", "512".into()),
            ("height", "512".into()),
            ("patch_size", "256".into()),
            ("train_ratio", "0.9".into()),
            ("seed", "0".into()),
            ("out_dir", root.join("data").display().to_string()),
        ],
    )
}

impl SynthArgs {
    pub fn from_config(c: &RunConfig) -> CmdResult<Self> {
        Ok(Self {
            scenes: c.parse("scenes")?,
            width: c.parse("width")?,
            height: c.parse("height")?,
            patch_size: c.parse("patch_size")?,
            train_ratio: c.parse("train_ratio")?,
            seed: c.parse("seed")?,
            out_dir: c
                .path("out_dir")
                .ok_or_else(|| Failure::Usage("out_dir is required".into()))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSummary {
    pub patches: usize,
    pub train: usize,
    pub validation: usize,
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Clears a previous run's scene and patch directories so a rerun leaves
/// exactly the same tree.
fn fresh_dir(path: &Path) -> CmdResult<()> {
    if path.exists() {
        warn!("replacing {}", path.display());
        fs::remove_dir_all(path).map_err(|e| io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

/// Writes `scenes/`, `patches/`, the split manifest and the resolved config.
/// Scene `i` draws from its own random stream of `seed`.
pub fn run(args: &SynthArgs, config: &RunConfig) -> CmdResult<SynthSummary> {
    if args.scenes == 0 {
        return Err(Error::EmptyDataset.into());
    }
    if args.patch_size == 0 || args.patch_size > args.width.min(args.height) {
        return Err(Failure::Usage(format!(
            "patch_size {} does not fit a {}x{} scene",
            args.patch_size, args.width, args.height
        )));
    }
    if !(args.train_ratio > 0.0 && args.train_ratio < 1.0) {
        return Err(Failure::Usage(format!(
            "train_ratio {} outside (0, 1)",
            args.train_ratio
        )));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| io(&args.out_dir, e))?;
    let scene_dir = args.out_dir.join(SCENE_DIR);
    fresh_dir(&scene_dir)?;
    fresh_dir(&args.out_dir.join(PATCH_DIR))?;

    let mut records = Vec::new();
    for i in 0..args.scenes {
        let source = format!("scene{i:03}");
        let mut rng = sample_rng(args.seed, i);
        let (mask, image) = synth_scene(args.width, args.height, &mut rng)?;
        mask.save(&scene_dir.join(format!("{source}_mask.png")))?;
        image.save(&scene_dir.join(format!("{source}_image.png")))?;
        for patch in extract_patches(&image, &mask, args.patch_size, &source)? {
            save_patch(&args.out_dir, &patch)?;
            records.push(patch.provenance);
        }
    }
    let manifest = split_dataset(&records, args.train_ratio, args.seed)?;
    manifest.save(&args.out_dir.join(MANIFEST_FILE))?;
    config.save(&args.out_dir.join(CONFIG_FILE))?;
    let summary = SynthSummary {
        patches: records.len(),
        train: manifest.count(Split::Train),
        validation: manifest.count(Split::Validation),
    };
    info!(
        "{} scenes -> {} patches ({} train / {} validation) in {}",
        args.scenes,
        summary.patches,
        summary.train,
        summary.validation,
        args.out_dir.display()
    );
    Ok(summary)
}
