use std::fs;
use std::path::{Path, PathBuf};

use glacier_cgan::data::dataset::{load_split, MANIFEST_FILE};
use glacier_cgan::data::{BitDepth, DatasetManifest, Raster, Split};
use glacier_cgan::metrics::{
    metrics_curve, metrics_to_csv, to_unit_range, GeneratorTranslator, ImagePair, MaskTranslator,
    MetricsRecord,
};
use glacier_cgan::nn::{checkpoint_file_name, Checkpoint};
use glacier_cgan::{Error, Tensor};
use log::{info, warn};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

pub const CONFIG_FILE: &str = "eval.config";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalArgs {
    pub checkpoint_dir: PathBuf,
    pub data_dir: PathBuf,
    /// Relative names resolve inside `checkpoint_dir`.
    pub metrics_file: PathBuf,
    pub grid_file: Option<PathBuf>,
    pub grid_samples: usize,
    pub seed: u64,
}

pub fn defaults(root: &Path) -> RunConfig {
    RunConfig::new(
        "eval",
        vec![
            ("checkpoint_dir", root.join("run").display().to_string()),
            ("data_dir", root.join("data").display().to_string()),
            ("metrics_file", "metrics.csv".into()),
            ("grid_file", String::new()),
            ("grid_samples", "4".into()),
            ("seed", "0".into()),
        ],
    )
}

impl EvalArgs {
    pub fn from_config(c: &RunConfig) -> CmdResult<Self> {
        let path = |key: &str| {
            c.path(key)
                .ok_or_else(|| Failure::Usage(format!("{key} is required")))
        };
        Ok(Self {
            checkpoint_dir: path("checkpoint_dir")?,
            data_dir: path("data_dir")?,
            metrics_file: path("metrics_file")?,
            grid_file: c.path("grid_file"),
            grid_samples: c.parse("grid_samples")?,
            seed: c.parse("seed")?,
        })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.checkpoint_dir.join(&self.metrics_file)
    }
}

/// Scores every checkpoint on the validation split and writes the metrics
/// CSV, plus an optional mask | target | prediction grid for the last one.
pub fn run(args: &EvalArgs, config: &RunConfig) -> CmdResult<Vec<MetricsRecord>> {
    let manifest = DatasetManifest::load(&args.data_dir.join(MANIFEST_FILE))?;
    let validation = load_split(&args.data_dir, &manifest, Split::Validation)?;
    if validation.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let curve = metrics_curve(&args.checkpoint_dir, &validation, args.seed)?;
    for (epoch, path, why) in &curve.missing {
        warn!("epoch {epoch}: {} skipped: {why}", path.display());
    }
    let last = curve.records.last().ok_or_else(|| {
        Failure::Data(format!(
            "no usable checkpoint in {}",
            args.checkpoint_dir.display()
        ))
    })?;
    let out = args.metrics_path();
    fs::write(&out, metrics_to_csv(&curve.records)).map_err(|e| {
        Failure::from(Error::Io {
            path: out.clone(),
            source: e,
        })
    })?;
    info!(
        "{} checkpoints scored; epoch {}: dice {:.4}, ssim {:.4}",
        curve.records.len(),
        last.epoch,
        last.mean_dice,
        last.mean_ssim
    );
    if let Some(name) = &args.grid_file {
        let ck = Checkpoint::load(&args.checkpoint_dir.join(checkpoint_file_name(last.epoch)))?;
        let translator = GeneratorTranslator {
            generator: &ck.generator,
            seed: args.seed,
        };
        let shown = args.grid_samples.min(validation.len());
        let grid = comparison_grid(&translator, &validation[..shown])?;
        grid.save(&args.checkpoint_dir.join(name))?;
    }
    config.save(&args.checkpoint_dir.join(CONFIG_FILE))?;
    Ok(curve.records)
}

/// One row per sample: mask, target and prediction side by side, 8-bit,
/// with intensities mapped from `[−1, 1]` to `[0, 1]`.
pub fn comparison_grid<T: MaskTranslator + ?Sized>(
    translator: &T,
    samples: &[ImagePair],
) -> glacier_cgan::Result<Raster> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (_, _, h, w) = first.mask.dims4("grid")?;
    let mut values = vec![0.0; samples.len() * h * 3 * w];
    let row_len = 3 * w;
    for (i, pair) in samples.iter().enumerate() {
        let pred = translator.translate(&pair.mask, i)?;
        let panels: [&Tensor; 3] = [&pair.mask, &pair.target, &pred];
        for (col, panel) in panels.into_iter().enumerate() {
            if panel.shape() != first.mask.shape() {
                return Err(Error::InvalidArgument(format!(
                    "grid sample {i}: panel shape {:?}, expected {:?}",
                    panel.shape(),
                    first.mask.shape()
                )));
            }
            let unit = to_unit_range(panel);
            for y in 0..h {
                let dst = (i * h + y) * row_len + col * w;
                values[dst..dst + w].copy_from_slice(&unit.data()[y * w..(y + 1) * w]);
            }
        }
    }
    Raster::from_unit(3 * w, samples.len() * h, BitDepth::Eight, &values)
}
