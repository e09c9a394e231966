use std::fs;
use std::path::{Path, PathBuf};

use glacier_cgan::data::dataset::{load_split, MANIFEST_FILE};
use glacier_cgan::data::{DatasetManifest, Split};
use glacier_cgan::metrics::list_checkpoints;
use glacier_cgan::nn::Variant;
use glacier_cgan::train::{train, DirectorySink, TrainConfig};
use glacier_cgan::Error;
use log::{info, warn};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

pub const CONFIG_FILE: &str = "train.config";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

pub fn defaults(root: &Path) -> RunConfig {
    let t = TrainConfig::default();
    RunConfig::new(
        "train",
        vec![
            ("data_dir", root.join("data").display().to_string()),
            ("out_dir", root.join("run").display().to_string()),
            ("variant", t.variant.to_string()),
            ("epochs", t.epochs.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            (
                "generator_base_channels",
                t.generator_base_channels.to_string(),
            ),
            ("generator_depth", t.generator_depth.to_string()),
            (
                "discriminator_base_channels",
                t.discriminator_base_channels.to_string(),
            ),
        ],
    )
}

impl TrainArgs {
    pub fn from_config(c: &RunConfig) -> CmdResult<Self> {
        let variant: Variant = c.get("variant").parse().map_err(Failure::usage)?;
        let train = TrainConfig {
            epochs: c.parse("epochs")?,
            checkpoint_interval: c.parse("checkpoint_interval")?,
            learning_rate: c.parse("learning_rate")?,
            adam_beta1: c.parse("adam_beta1")?,
            adam_beta2: c.parse("adam_beta2")?,
            batch_size: c.parse("batch_size")?,
            seed: c.parse("seed")?,
            variant,
            generator_base_channels: c.parse("generator_base_channels")?,
            generator_depth: c.parse("generator_depth")?,
            discriminator_base_channels: c.parse("discriminator_base_channels")?,
        };
        train.validate().map_err(Failure::usage)?;
        let path = |key: &str| {
            c.path(key)
                .ok_or_else(|| Failure::Usage(format!("{key} is required")))
        };
        Ok(Self {
            data_dir: path("data_dir")?,
            out_dir: path("out_dir")?,
            train,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint_epochs: Vec<u32>,
    pub final_l1: f64,
}

/// Trains on the manifest's training split, writing checkpoints, the loss
/// log and the resolved config into `out_dir`.
pub fn run(args: &TrainArgs, config: &RunConfig) -> CmdResult<TrainSummary> {
    let manifest = DatasetManifest::load(&args.data_dir.join(MANIFEST_FILE))?;
    let dataset = load_split(&args.data_dir, &manifest, Split::Train)?;
    info!(
        "{} training pairs from {}",
        dataset.len(),
        args.data_dir.display()
    );
    let mut sink = DirectorySink::create(&args.out_dir)?;
    // stale checkpoints from a longer earlier run would pollute evaluation
    for (_, path) in list_checkpoints(&args.out_dir)? {
        warn!("removing checkpoint of a previous run: {}", path.display());
        fs::remove_file(&path).map_err(|e| {
            Failure::from(Error::Io {
                path: path.clone(),
                source: e,
            })
        })?;
    }
    config.save(&args.out_dir.join(CONFIG_FILE))?;
    let report = train(&dataset, &args.train, &mut sink)?;
    let final_l1 = report.losses.last().map_or(f64::NAN, |l| l.g_l1);
    info!(
        "done: checkpoints at epochs {:?}, final L1 {final_l1:.4}",
        report.checkpoint_epochs
    );
    Ok(TrainSummary {
        checkpoint_epochs: report.checkpoint_epochs,
        final_l1,
    })
}
