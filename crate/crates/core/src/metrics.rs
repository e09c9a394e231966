//! Non-binary dice, Gaussian-window SSIM, and per-checkpoint aggregation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{generate, parse_checkpoint_file_name, Checkpoint, NetworkState};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `2·ΣXY / (ΣX + ΣY)`; two all-zero inputs score 1.
pub fn dice_non_binary(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "dice",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    let mut inter = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dice requires nonnegative intensities; element {i} is ({a}, {b})"
            )));
        }
        inter += a * b;
        sx += a;
        sy += b;
    }
    let denom = sx + sy;
    Ok(if denom == 0.0 {
        1.0
    } else {
        2.0 * inter / denom
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Height and width of a single-plane tensor (rank ≥ 2, leading dims 1).
pub(crate) fn plane_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(
            op,
            format!("expected a single-channel image, got {s:?}"),
        ));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian-weighted (σ = 1.5) windows, for
/// images with dynamic range `data_range`.
pub fn ssim(x: &Tensor, y: &Tensor, data_range: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    let (h, w) = plane_dims(x, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim window {SSIM_WINDOW}x{SSIM_WINDOW} larger than image {h}x{w}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let (xd, yd) = (x.data(), y.data());
    let xx: Vec<f64> = xd.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yd.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xd.iter().zip(yd).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(xd, h, w, &taps);
    let mu_y = filter_valid(yd, h, w, &taps);
    let e_xx = filter_valid(&xx, h, w, &taps);
    let e_yy = filter_valid(&yy, h, w, &taps);
    let e_xy = filter_valid(&xy, h, w, &taps);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        acc +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(acc / mu_x.len() as f64)
}

/// Mean metrics of one generator snapshot over a validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u32,
    pub mean_dice: f64,
    pub mean_ssim: f64,
    pub n_samples: usize,
    /// Samples dropped because of a shape mismatch.
    pub skipped: usize,
}

/// A mask/target pair with both tensors in `[−1, 1]`, shaped `1×1×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub mask: Tensor,
    pub target: Tensor,
}

/// Anything that turns a generator input mask into an image in `[−1, 1]`.
pub trait MaskTranslator {
    fn translate(&self, mask: &Tensor, sample_index: usize) -> Result<Tensor>;
}

/// Stochastic generator inference seeded per sample, so results do not
/// depend on evaluation order.
pub struct GeneratorTranslator<'a> {
    pub generator: &'a NetworkState,
    pub seed: u64,
}

impl MaskTranslator for GeneratorTranslator<'_> {
    fn translate(&self, mask: &Tensor, sample_index: usize) -> Result<Tensor> {
        let mut rng = sample_rng(self.seed, sample_index);
        generate(self.generator, mask, &mut rng)
    }
}

/// Independent stream `index + 1` of `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Maps `[−1, 1]` onto `[0, 1]`.
pub fn to_unit_range(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) / 2.0)
}

/// Scores every validation pair: dice on `[0, 1]` intensities and SSIM with
/// `L = 1`.
pub fn evaluate<T: MaskTranslator + ?Sized>(
    translator: &T,
    validation: &[ImagePair],
    epoch: u32,
) -> Result<MetricsRecord> {
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut dice_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (i, pair) in validation.iter().enumerate() {
        let pred = match translator.translate(&pair.mask, i) {
            Ok(p) => p,
            Err(e @ Error::Shape { .. }) => {
                warn!("validation sample {i} skipped: {e}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if pred.shape() != pair.target.shape() {
            warn!(
                "validation sample {i} skipped: prediction {:?} vs target {:?}",
                pred.shape(),
                pair.target.shape()
            );
            skipped += 1;
            continue;
        }
        let p = to_unit_range(&pred);
        let t = to_unit_range(&pair.target);
        dice_sum += dice_non_binary(&p, &t)?;
        ssim_sum += ssim(&p, &t, 1.0)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "all {skipped} validation samples were skipped"
        )));
    }
    Ok(MetricsRecord {
        epoch,
        mean_dice: dice_sum / n as f64,
        mean_ssim: ssim_sum / n as f64,
        n_samples: n,
        skipped,
    })
}

/// Evaluates a generator checkpoint on the validation set.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    validation: &[ImagePair],
    seed: u64,
) -> Result<MetricsRecord> {
    let translator = GeneratorTranslator {
        generator: &checkpoint.generator,
        seed,
    };
    evaluate(&translator, validation, checkpoint.epoch)
}

/// Metrics for every checkpoint in a directory, ordered by epoch.
#[derive(Clone, Debug, Default)]
pub struct MetricsCurve {
    pub records: Vec<MetricsRecord>,
    /// Checkpoints that could not be read or evaluated.
    pub missing: Vec<(u32, PathBuf, String)>,
}

/// `ckpt_epoch{N}.bin` files in `dir`, sorted by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(epoch) = entry
            .file_name()
            .to_str()
            .and_then(parse_checkpoint_file_name)
        {
            out.push((epoch, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn metrics_curve(dir: &Path, validation: &[ImagePair], seed: u64) -> Result<MetricsCurve> {
    let checkpoints = list_checkpoints(dir)?;
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no checkpoints in {}",
            dir.display()
        )));
    }
    let mut curve = MetricsCurve::default();
    for (epoch, path) in checkpoints {
        let result =
            Checkpoint::load(&path).and_then(|ck| evaluate_checkpoint(&ck, validation, seed));
        match result {
            Ok(rec) => curve.records.push(rec),
            Err(e) => {
                warn!("checkpoint {} unusable: {e}", path.display());
                curve.missing.push((epoch, path, e.to_string()));
            }
        }
    }
    Ok(curve)
}

pub const METRICS_CSV_HEADER: &str = "epoch,mean_dice,mean_ssim,n_samples";

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.epoch, r.mean_dice, r.mean_ssim, r.n_samples
        );
    }
    s
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(Error::InvalidArgument("metrics CSV header missing".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::InvalidArgument(format!("metrics CSV line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                mean_dice: f[1].parse().map_err(|_| bad())?,
                mean_ssim: f[2].parse().map_err(|_| bad())?,
                n_samples: f[3].parse().map_err(|_| bad())?,
                skipped: 0,
            })
        })
        .collect()
}
