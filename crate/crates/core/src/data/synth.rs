//! Procedural glacier/ocean scenes with SAR-like speckle.
//!
//! A calving front is drawn as a smooth random curve across the scene; one
//! side is glacier (bright, textured, mild speckle), the other ocean (dark,
//! strong speckle). Backscatter is simulated in linear power with
//! multiplicative Gamma speckle, then shown in decibels over a fixed window
//! mapped onto `[0, 1]`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::raster::{BitDepth, Raster, SegmentationMask, GLACIER, OCEAN};
use crate::error::{Error, Result};

pub const MIN_SCENE_EXTENT: usize = 64;

const DB_FLOOR: f64 = -25.0;
const DB_CEIL: f64 = 0.0;
const GLACIER_DB: f64 = -6.0;
const GLACIER_TEXTURE_DB: f64 = 4.0;
const GLACIER_LOOKS: f64 = 4.0;
const OCEAN_DB: f64 = -17.0;
const OCEAN_TEXTURE_DB: f64 = 2.0;
const OCEAN_LOOKS: f64 = 2.0;
const NOISE_CELL: usize = 16;

/// Smooth value noise in `[−0.5, 0.5]` from a bilinearly interpolated lattice.
fn value_noise<R: Rng + ?Sized>(width: usize, height: usize, cell: usize, rng: &mut R) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |gx: usize, gy: usize| lattice[gy * gw + gx];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out[y * width + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Front position (fraction of the cross extent) along a normalized
/// coordinate `t ∈ [0, 1]`; stays inside `[0.2, 0.8]`.
struct FrontCurve {
    base: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl FrontCurve {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let base = rng.random_range(0.35..0.65);
        let harmonics = (0..3)
            .map(|_| {
                let amp = rng.random_range(0.0..0.05);
                let freq = rng.random_range(0.5..4.0);
                let phase = rng.random_range(0.0..TAU);
                (amp, freq, phase)
            })
            .collect();
        Self { base, harmonics }
    }

    fn at(&self, t: f64) -> f64 {
        let wiggle: f64 = self
            .harmonics
            .iter()
            .map(|(a, f, p)| a * (TAU * f * t + p).sin())
            .sum();
        self.base + wiggle
    }
}

/// Generates a paired `(mask, image)` scene; the image is 16-bit.
pub fn synth_scene<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<(SegmentationMask, Raster)> {
    if width < MIN_SCENE_EXTENT || height < MIN_SCENE_EXTENT {
        return Err(Error::InvalidArgument(format!(
            "scene {width}x{height} smaller than {MIN_SCENE_EXTENT}x{MIN_SCENE_EXTENT}"
        )));
    }
    let front = FrontCurve::random(rng);
    // 0: front runs left-right, 1: top-bottom; `flip` puts glacier on the
    // far side.
    let vertical = rng.random_bool(0.5);
    let flip = rng.random_bool(0.5);
    let mut classes = vec![OCEAN; width * height];
    for y in 0..height {
        for x in 0..width {
            let (along, across, extent, span) = if vertical {
                (y, x, width, height)
            } else {
                (x, y, height, width)
            };
            let boundary = front.at(along as f64 / span as f64) * extent as f64;
            let near_side = (across as f64) < boundary;
            if near_side != flip {
                classes[y * width + x] = GLACIER;
            }
        }
    }

    let coarse = value_noise(width, height, NOISE_CELL, rng);
    let fine = value_noise(width, height, NOISE_CELL / 4, rng);
    let glacier_speckle = Gamma::new(GLACIER_LOOKS, 1.0 / GLACIER_LOOKS).expect("valid gamma");
    let ocean_speckle = Gamma::new(OCEAN_LOOKS, 1.0 / OCEAN_LOOKS).expect("valid gamma");
    let values: Vec<f64> = (0..width * height)
        .map(|i| {
            let texture = 0.7 * coarse[i] + 0.3 * fine[i];
            let db = if classes[i] == GLACIER {
                GLACIER_DB
                    + GLACIER_TEXTURE_DB * texture
                    + 10.0 * glacier_speckle.sample(rng).log10()
            } else {
                OCEAN_DB + OCEAN_TEXTURE_DB * texture + 10.0 * ocean_speckle.sample(rng).log10()
            };
            ((db - DB_FLOOR) / (DB_CEIL - DB_FLOOR)).clamp(0.0, 1.0)
        })
        .collect();
    let mask = SegmentationMask::new(width, height, classes)?;
    let image = Raster::from_unit(width, height, BitDepth::Sixteen, &values)?;
    Ok((mask, image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_is_two_valued_with_both_classes() {
        for seed in 0..20 {
            let (m, img) = synth_scene(96, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(m.classes.iter().all(|&c| c == OCEAN || c == GLACIER));
            let f = m.glacier_fraction();
            assert!(
                (0.1..=0.9).contains(&f),
                "seed {seed}: glacier fraction {f}"
            );
            assert_eq!((img.width, img.height), (96, 64));
        }
    }

    #[test]
    fn glacier_brighter_than_ocean() {
        let mut holds = 0;
        for seed in 0..100 {
            let (m, img) = synth_scene(64, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let unit = img.to_unit();
            let mean_of = |class| {
                let v: Vec<f64> = unit
                    .iter()
                    .zip(&m.classes)
                    .filter(|(_, &c)| c == class)
                    .map(|(v, _)| *v)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            if mean_of(GLACIER) > mean_of(OCEAN) {
                holds += 1;
            }
        }
        assert!(holds >= 99, "held for {holds} of 100 seeds");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_scene(64, 80, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = synth_scene(64, 80, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(synth_scene(63, 80, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn mask_png_uses_documented_gray_levels() {
        let (m, _) = synth_scene(64, 64, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.png");
        m.save(&p).unwrap();
        let raw = Raster::load(&p).unwrap();
        assert_eq!(raw.depth, BitDepth::Eight);
        let mut levels: Vec<u16> = raw.samples.clone();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![0, 255]);
        let back: Vec<u8> = raw.samples.iter().map(|&v| (v == 255) as u8).collect();
        assert_eq!(back, m.classes);
    }
}
