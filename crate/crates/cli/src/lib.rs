//! `glacier-cgan` command line: dataset synthesis, training, evaluation and
//! mask-to-image generation.
//!
//! Every command resolves a [`config::RunConfig`] from its defaults, an
//! optional `--config` file and then its flags, and writes the resolved
//! config next to its outputs.

pub mod commands;
pub mod config;
pub mod failure;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{eval, generate, synth, train};
use config::RunConfig;
use failure::CmdResult;

/// Environment variable holding the default output root.
pub const OUT_ROOT_ENV: &str = "GLACIER_CGAN_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "glacier-cgan",
    version,
    about = "Glacier mask to SAR image translation with a conditional GAN"
)]
pub struct Cli {
    /// Root under which default data, run and output paths live.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "glacier-cgan-out")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize paired scenes, cut them into patches and write a split manifest.
    SynthData(SynthFlags),
    /// Train a generator/discriminator pair on a dataset's training split.
    Train(TrainFlags),
    /// Score every checkpoint of a run on the validation split.
    Eval(EvalFlags),
    /// Turn a two-valued mask into a synthetic image.
    Generate(GenerateFlags),
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_text(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    /// key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl SynthFlags {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("scenes", text(&self.scenes)),
            ("width", text(&self.width)),
            ("height", text(&self.height)),
            ("patch_size", text(&self.patch_size)),
            ("train_ratio", text(&self.train_ratio)),
            ("seed", text(&self.seed)),
            ("out_dir", path_text(&self.out_dir)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory holding manifest.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// One of orig, gen5, dis3, l11gan100, l150gan50.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub checkpoint_interval: Option<u32>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub generator_base_channels: Option<usize>,
    #[arg(long)]
    pub generator_depth: Option<usize>,
    #[arg(long)]
    pub discriminator_base_channels: Option<usize>,
}

impl TrainFlags {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("data_dir", path_text(&self.data_dir)),
            ("out_dir", path_text(&self.out_dir)),
            ("variant", self.variant.clone()),
            ("epochs", text(&self.epochs)),
            ("checkpoint_interval", text(&self.checkpoint_interval)),
            ("learning_rate", text(&self.learning_rate)),
            ("adam_beta1", text(&self.adam_beta1)),
            ("adam_beta2", text(&self.adam_beta2)),
            ("batch_size", text(&self.batch_size)),
            ("seed", text(&self.seed)),
            (
                "generator_base_channels",
                text(&self.generator_base_channels),
            ),
            ("generator_depth", text(&self.generator_depth)),
            (
                "discriminator_base_channels",
                text(&self.discriminator_base_channels),
            ),
        ]
    }
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of ckpt_epoch{N}.bin files; outputs go here too.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Metrics CSV, relative to the checkpoint directory.
    #[arg(long)]
    pub metrics_file: Option<PathBuf>,
    /// Optional mask | target | prediction PNG, relative to the checkpoint directory.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub grid_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl EvalFlags {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("checkpoint_dir", path_text(&self.checkpoint_dir)),
            ("data_dir", path_text(&self.data_dir)),
            ("metrics_file", path_text(&self.metrics_file)),
            ("grid_file", path_text(&self.grid_file)),
            ("grid_samples", text(&self.grid_samples)),
            ("seed", text(&self.seed)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct GenerateFlags {
    /// key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint file, or a run directory (its latest checkpoint is used).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Two-valued mask image (PNG or raw raster).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Masks larger than one tile are processed tile by tile.
    #[arg(long)]
    pub tile: Option<usize>,
}

impl GenerateFlags {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("checkpoint", path_text(&self.checkpoint)),
            ("mask", path_text(&self.mask)),
            ("out", path_text(&self.out)),
            ("seed", text(&self.seed)),
            ("tile", text(&self.tile)),
        ]
    }
}

fn resolve(
    mut config: RunConfig,
    file: &Option<PathBuf>,
    flags: Vec<(&'static str, Option<String>)>,
) -> CmdResult<RunConfig> {
    if let Some(path) = file {
        config.merge_file(path)?;
    }
    config.merge_flags(flags)?;
    Ok(config)
}

/// The fully resolved configuration of a parsed command line.
pub fn resolve_config(cli: &Cli) -> CmdResult<RunConfig> {
    let root = &cli.out_root;
    match &cli.command {
        Command::SynthData(f) => resolve(synth::defaults(root), &f.config, f.overrides()),
        Command::Train(f) => resolve(train::defaults(root), &f.config, f.overrides()),
        Command::Eval(f) => resolve(eval::defaults(root), &f.config, f.overrides()),
        Command::Generate(f) => resolve(generate::defaults(root), &f.config, f.overrides()),
    }
}

pub fn execute(cli: &Cli) -> CmdResult<()> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::SynthData(_) => {
            synth::run(&synth::SynthArgs::from_config(&config)?, &config)?;
        }
        Command::Train(_) => {
            train::run(&train::TrainArgs::from_config(&config)?, &config)?;
        }
        Command::Eval(_) => {
            eval::run(&eval::EvalArgs::from_config(&config)?, &config)?;
        }
        Command::Generate(_) => {
            generate::run(&generate::GenerateArgs::from_config(&config)?, &config)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data, 3 runtime.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
