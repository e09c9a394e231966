use std::path::{Path, PathBuf};

use glacier_cgan::data::{BitDepth, Raster, SegmentationMask};
use glacier_cgan::metrics::{list_checkpoints, sample_rng, to_unit_range};
use glacier_cgan::nn::{generate, Checkpoint, NetworkState};
use glacier_cgan::Error;
use log::info;

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

pub const DEFAULT_TILE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateArgs {
    /// A checkpoint file, or a directory whose latest checkpoint is used.
    pub checkpoint: PathBuf,
    pub mask: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub tile: usize,
}

pub fn defaults(root: &Path) -> RunConfig {
    RunConfig::new(
        "generate",
        vec![
            ("checkpoint", root.join("run").display().to_string()),
            ("mask", String::new()),
            ("out", root.join("generated.png").display().to_string()),
            ("seed", "0".into()),
            ("tile", DEFAULT_TILE.to_string()),
        ],
    )
}

impl GenerateArgs {
    pub fn from_config(c: &RunConfig) -> CmdResult<Self> {
        let path = |key: &str| {
            c.path(key)
                .ok_or_else(|| Failure::Usage(format!("{key} is required")))
        };
        let tile: usize = c.parse("tile")?;
        if tile == 0 {
            return Err(Failure::Usage("tile must be positive".into()));
        }
        Ok(Self {
            checkpoint: path("checkpoint")?,
            mask: path("mask")?,
            out: path("out")?,
            seed: c.parse("seed")?,
            tile,
        })
    }

    /// The resolved config is written next to the image as `<out>.config`.
    pub fn config_path(&self) -> PathBuf {
        let mut name = self.out.clone().into_os_string();
        name.push(".config");
        PathBuf::from(name)
    }
}

fn resolve_checkpoint(path: &Path) -> CmdResult<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    list_checkpoints(path)?
        .pop()
        .map(|(_, p)| p)
        .ok_or_else(|| Failure::Data(format!("no checkpoints in {}", path.display())))
}

/// Runs the generator over `tile × tile` blocks of the mask in row-major
/// order; block `i` samples its dropout noise from stream `i` of `seed`.
/// Returns intensities in `[0, 1]`.
pub fn synthesize(
    generator: &NetworkState,
    mask: &SegmentationMask,
    tile: usize,
    seed: u64,
) -> glacier_cgan::Result<Vec<f64>> {
    let (w, h) = (mask.width, mask.height);
    if w % tile != 0 || h % tile != 0 {
        return Err(Error::InvalidArgument(format!(
            "mask {w}x{h} is not a whole number of {tile}x{tile} tiles"
        )));
    }
    let (cols, rows) = (w / tile, h / tile);
    let mut out = vec![0.0; w * h];
    for ty in 0..rows {
        for tx in 0..cols {
            let index = ty * cols + tx;
            let input = mask
                .crop(tx * tile, ty * tile, tile, tile)
                .to_signed_tensor();
            let pred = to_unit_range(&generate(generator, &input, &mut sample_rng(seed, index))?);
            for y in 0..tile {
                let dst = (ty * tile + y) * w + tx * tile;
                out[dst..dst + tile].copy_from_slice(&pred.data()[y * tile..(y + 1) * tile]);
            }
        }
    }
    Ok(out)
}

/// Writes a 16-bit image (PNG when `out` ends in `.png`).
pub fn run(args: &GenerateArgs, config: &RunConfig) -> CmdResult<()> {
    let ck_path = resolve_checkpoint(&args.checkpoint)?;
    let ck = Checkpoint::load(&ck_path)?;
    let mask = SegmentationMask::load(&args.mask)?;
    let values = synthesize(&ck.generator, &mask, args.tile, args.seed)?;
    let image = Raster::from_unit(mask.width, mask.height, BitDepth::Sixteen, &values)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| {
            Failure::from(Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })
        })?;
    }
    image.save(&args.out)?;
    config.save(&args.config_path())?;
    info!(
        "{} ({} epoch {}) -> {}",
        args.mask.display(),
        ck.variant,
        ck.epoch,
        args.out.display()
    );
    Ok(())
}
