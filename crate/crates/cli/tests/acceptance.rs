//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p glacier-cgan-cli --test acceptance -- 4 7`.

use std::collections::HashSet;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use glacier_cgan::data::dataset::to_image_pair;
use glacier_cgan::data::{extract_patches, split_dataset, synth_scene, Provenance, Split};
use glacier_cgan::gradcheck::{standard_suite, TOLERANCE};
use glacier_cgan::metrics::{
    dice_non_binary, evaluate, ssim, GeneratorTranslator, ImagePair, SSIM_K1, SSIM_K2,
};
use glacier_cgan::nn::{
    build_discriminator, build_generator, discriminator_forward, receptive_field, trace_layers,
    Variant,
};
use glacier_cgan::train::{initial_networks, train, train_step, GanState, MemorySink, TrainConfig};
use glacier_cgan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, r).map(|v| if v < 0.5 { -1.0 } else { 1.0 })
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let suite = standard_suite(12).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = suite
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} ({:.2e})", c.name, c.max_relative_error))
        .collect();
    ensure(failed.is_empty(), || {
        format!("over {TOLERANCE:e}: {}", failed.join(", "))
    })?;
    ensure(elapsed < Duration::from_secs(300), || {
        format!("suite took {elapsed:?}")
    })?;
    let worst = suite
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    Ok(format!(
        "{} checks, worst relative error {worst:.2e}, {:.1}s",
        suite.len(),
        elapsed.as_secs_f64()
    ))
}

/// Columns of a `size × size` input whose perturbation moves output `(o, o)`.
fn empirical_extent(size: usize, o: usize) -> Result<Vec<usize>, String> {
    let d =
        build_discriminator(&Variant::Orig.config(), 2, &mut rng(40)).map_err(|e| e.to_string())?;
    let mut r = rng(41);
    let mask = random_mask(size, size, &mut r);
    let image = Tensor::uniform(&[1, 1, size, size], -1.0, 1.0, &mut r);
    let base = discriminator_forward(&d, &mask, &image).map_err(|e| e.to_string())?;
    let (_, _, _, ow) = base.dims4("d").map_err(|e| e.to_string())?;
    let row = size / 2;
    let mut hit = Vec::new();
    for x in 0..size {
        let mut moved = image.clone();
        moved.data_mut()[row * size + x] += 1.0;
        let out = discriminator_forward(&d, &mask, &moved).map_err(|e| e.to_string())?;
        let i = o * ow + o;
        if out.data()[i] != base.data()[i] {
            hit.push(x);
        }
    }
    Ok(hit)
}

fn architecture() -> Outcome {
    let orig = Variant::Orig.config();
    let mut r = rng(1);
    let d = build_discriminator(&orig, 64, &mut r).map_err(|e| e.to_string())?;
    let mask = random_mask(256, 256, &mut r);
    let image = Tensor::uniform(&[1, 1, 256, 256], -1.0, 1.0, &mut r);
    let map = discriminator_forward(&d, &mask, &image).map_err(|e| e.to_string())?;
    ensure(map.shape() == [1, 1, 30, 30], || {
        format!("patch map {:?}", map.shape())
    })?;

    let rf = receptive_field(&[(4, 2), (4, 2), (4, 2), (4, 1), (4, 1)]);
    ensure(rf == 70, || format!("analytic receptive field {rf}"))?;
    // output 5 of a 96-wide input sees columns 17..=86, clear of the border
    let hit = empirical_extent(96, 5)?;
    let contiguous = hit.windows(2).all(|w| w[1] == w[0] + 1);
    ensure(hit.len() == 70 && contiguous, || {
        format!("empirical receptive field {} columns: {hit:?}", hit.len())
    })?;

    let g = build_generator(&orig, 4, 8, &mut r).map_err(|e| e.to_string())?;
    let layers = trace_layers(&g, &mask, &mut r).map_err(|e| e.to_string())?;
    let bottleneck = layers[7].shape();
    ensure(bottleneck[2..] == [1, 1], || {
        format!("bottleneck {bottleneck:?}")
    })?;
    let out = layers.last().unwrap();
    ensure(out.shape() == [1, 1, 256, 256], || {
        format!("output {:?}", out.shape())
    })?;
    ensure(out.data().iter().all(|v| (-1.0..=1.0).contains(v)), || {
        "generator output leaves [-1, 1]".into()
    })?;

    let full = build_generator(&orig, 64, 8, &mut rng(2)).map_err(|e| e.to_string())?;
    let w: Vec<f64> = full
        .layers
        .iter()
        .flat_map(|l| l.weight.data().iter().copied())
        .collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    ensure(w.len() >= 1_000_000, || format!("only {} weights", w.len()))?;
    ensure(mean.abs() <= 0.002 && (std - 0.02).abs() <= 0.002, || {
        format!("init mean {mean:.5}, std {std:.5}")
    })?;
    Ok(format!(
        "30x30 map, receptive field {rf} (analytic and measured), bottleneck {bottleneck:?}, init mean {mean:.1e} std {std:.5} over {} weights",
        w.len()
    ))
}

fn variant_matrix() -> Outcome {
    let expected = [
        (Variant::Orig, 1.0, 100.0),
        (Variant::Gen5, 1.0, 100.0),
        (Variant::Dis3, 1.0, 100.0),
        (Variant::L11Gan100, 100.0, 1.0),
        (Variant::L150Gan50, 50.0, 50.0),
    ];
    let mut r = rng(3);
    let mask = random_mask(32, 32, &mut r);
    let pair = ImagePair {
        target: Tensor::uniform(&[1, 1, 32, 32], -1.0, 1.0, &mut r),
        mask,
    };
    for (variant, lg, ll) in expected {
        let cfg = TrainConfig {
            variant,
            generator_base_channels: 4,
            generator_depth: 5,
            discriminator_base_channels: 4,
            ..TrainConfig::default()
        };
        let (g, d) = initial_networks(&cfg).map_err(|e| e.to_string())?;
        let mut state = GanState::new(g, d);
        let before = state.clone();
        let step = train_step(
            &mut state,
            std::slice::from_ref(&pair),
            &variant.config(),
            &cfg.adam(),
            &mut rng(4),
        )
        .map_err(|e| format!("{variant}: {e}"))?;
        ensure(step.lambda_gan == lg && step.lambda_l1 == ll, || {
            format!(
                "{variant}: weights ({}, {})",
                step.lambda_gan, step.lambda_l1
            )
        })?;
        ensure(step.is_finite(), || format!("{variant}: {step:?}"))?;
        let total = lg * step.g_gan_term + ll * step.g_l1_term;
        ensure(
            (step.g_total - total).abs() <= 1e-12 * total.abs().max(1.0),
            || format!("{variant}: total {} vs {total}", step.g_total),
        )?;
        ensure(
            state.generator != before.generator && state.discriminator != before.discriminator,
            || format!("{variant}: a network did not move"),
        )?;
    }
    Ok("all five variants stepped with weights (1,100) x3, (100,1), (50,50)".into())
}

fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let sigma: f64 = 1.5;
    let c = 5.0;
    let mut weights = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            weights[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    let mut count = 0;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let at = |img: &[f64], i: usize, j: usize| img[(top + i) * w + left + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += weights[i * k + j] * at(x, i, j);
                    my += weights[i * k + j] * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (dx, dy) = (at(x, i, j) - mx, at(y, i, j) - my);
                    let wt = weights[i * k + j];
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn metric_oracles() -> Outcome {
    let mut r = rng(5);
    let mut worst_dice: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=400);
        let sparse = r.random_bool(0.3);
        let draw = |r: &mut ChaCha8Rng| {
            let v: f64 = r.random();
            if sparse && r.random_bool(0.5) {
                0.0
            } else {
                v
            }
        };
        let xs: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let ys: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let (mut inter, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            inter += xs[i] * ys[i];
            sx += xs[i];
            sy += ys[i];
        }
        let want = if sx + sy == 0.0 {
            1.0
        } else {
            2.0 * inter / (sx + sy)
        };
        let got = dice_non_binary(
            &Tensor::new(&[n], xs).unwrap(),
            &Tensor::new(&[n], ys).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        worst_dice = worst_dice.max((got - want).abs());
    }
    ensure(worst_dice <= 1e-12, || format!("dice error {worst_dice:e}"))?;

    let mut worst_ssim: f64 = 0.0;
    for i in 0..100 {
        let x = Tensor::uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut r);
        let y = if i % 2 == 0 {
            Tensor::uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut r)
        } else {
            let noise = Tensor::uniform(&[1, 1, 64, 64], -0.2, 0.2, &mut r);
            let mixed = x
                .data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| (0.8 * a + b).clamp(0.0, 1.0))
                .collect();
            Tensor::new(&[1, 1, 64, 64], mixed).unwrap()
        };
        let got = ssim(&x, &y, 1.0).map_err(|e| e.to_string())?;
        let want = ssim_oracle(x.data(), y.data(), 64, 64);
        worst_ssim = worst_ssim.max((got - want).abs());
    }
    ensure(worst_ssim <= 1e-6, || format!("ssim error {worst_ssim:e}"))?;

    let ones = Tensor::full(&[1, 1, 16, 16], 1.0);
    let halves = Tensor::full(&[1, 1, 16, 16], 0.5);
    let d = dice_non_binary(&ones, &halves).map_err(|e| e.to_string())?;
    ensure((d - 2.0 / 3.0).abs() <= 1e-12, || {
        format!("constant dice {d}")
    })?;
    let (a, b) = (0.3, 0.7);
    let s = ssim(
        &Tensor::full(&[1, 1, 16, 16], a),
        &Tensor::full(&[1, 1, 16, 16], b),
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let c1 = SSIM_K1 * SSIM_K1;
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    ensure((s - want).abs() <= 1e-12, || {
        format!("constant ssim {s} vs {want}")
    })?;
    Ok(format!(
        "dice max error {worst_dice:.1e} (1000 pairs), ssim max error {worst_ssim:.1e} (100 pairs), analytic cases exact"
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let (m, img) = synth_scene(64, 64, &mut rng(1)).map_err(|e| e.to_string())?;
    let pair = to_image_pair(&m, &img).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        generator_base_channels: 32,
        discriminator_base_channels: 32,
        generator_depth: 6,
        seed: 3,
        ..TrainConfig::default()
    };
    ensure(cfg.learning_rate == 2e-4 && cfg.batch_size == 1, || {
        "defaults drifted".into()
    })?;
    let (g, d) = initial_networks(&cfg).map_err(|e| e.to_string())?;
    let mut state = GanState::new(g, d);
    let variant = cfg.variant.config();
    let adam = cfg.adam();
    let mut noise = rng(5);
    let mut first = None;
    let mut last = f64::NAN;
    for _ in 0..500 {
        let step = train_step(
            &mut state,
            std::slice::from_ref(&pair),
            &variant,
            &adam,
            &mut noise,
        )
        .map_err(|e| e.to_string())?;
        first.get_or_insert(step.g_l1_term);
        last = step.g_l1_term;
    }
    let first = first.unwrap();
    let elapsed = start.elapsed();
    let ratio = last / first;
    ensure(ratio < 0.1, || {
        format!("L1 {first:.4} -> {last:.4} ({:.1}%)", 100.0 * ratio)
    })?;
    ensure(elapsed < Duration::from_secs(600), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "L1 {first:.4} -> {last:.4} ({:.1}% of initial) in {:.0}s",
        100.0 * ratio,
        elapsed.as_secs_f64()
    ))
}

fn desk_scale() -> Outcome {
    let mut r = rng(1);
    let mut patches = Vec::new();
    for s in 0..8 {
        let (m, img) = synth_scene(128, 128, &mut r).map_err(|e| e.to_string())?;
        patches.extend(
            extract_patches(&img, &m, 64, &format!("scene{s}")).map_err(|e| e.to_string())?,
        );
    }
    ensure(patches.len() == 32, || format!("{} patches", patches.len()))?;
    let records: Vec<Provenance> = patches.iter().map(|p| p.provenance.clone()).collect();
    let manifest = split_dataset(&records, 0.9, 7).map_err(|e| e.to_string())?;
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for (p, e) in patches.iter().zip(&manifest.entries) {
        let pair = to_image_pair(&p.mask, &p.image).map_err(|e| e.to_string())?;
        match e.split {
            Split::Train => train_set.push(pair),
            Split::Validation => val_set.push(pair),
        }
    }
    let cfg = TrainConfig {
        epochs: 200,
        checkpoint_interval: 15,
        generator_base_channels: 8,
        discriminator_base_channels: 8,
        generator_depth: 6,
        seed: 3,
        ..TrainConfig::default()
    };
    let score = |g| {
        evaluate(
            &GeneratorTranslator {
                generator: g,
                seed: 5,
            },
            &val_set,
            0,
        )
        .map_err(|e| e.to_string())
    };
    let (g0, _) = initial_networks(&cfg).map_err(|e| e.to_string())?;
    let before = score(&g0)?;
    let mut sink = MemorySink::default();
    train(&train_set, &cfg, &mut sink).map_err(|e| e.to_string())?;
    let epochs: Vec<u32> = sink.checkpoints.iter().map(|c| c.epoch).collect();
    let mut want: Vec<u32> = (1..=13).map(|k| 15 * k).collect();
    want.push(200);
    ensure(epochs == want, || format!("checkpoints at {epochs:?}"))?;
    let after = score(&sink.checkpoints.last().unwrap().generator)?;
    ensure(
        after.mean_dice > before.mean_dice && after.mean_ssim > before.mean_ssim,
        || {
            format!(
                "untrained dice {:.4} ssim {:.4}, final dice {:.4} ssim {:.4}",
                before.mean_dice, before.mean_ssim, after.mean_dice, after.mean_ssim
            )
        },
    )?;
    Ok(format!(
        "{} train / {} val; dice {:.4} -> {:.4}, ssim {:.4} -> {:.4}; checkpoints 15..195 and 200",
        train_set.len(),
        val_set.len(),
        before.mean_dice,
        after.mean_dice,
        before.mean_ssim,
        after.mean_ssim
    ))
}

fn split_arithmetic() -> Outcome {
    let records: Vec<Provenance> = (0..2226)
        .map(|i| Provenance {
            source: format!("scene{}", i / 64),
            offset_x: (i % 8) * 256,
            offset_y: (i % 64 / 8) * 256,
        })
        .collect();
    let all: HashSet<String> = records.iter().map(|p| p.patch_id()).collect();
    ensure(all.len() == 2226, || "patch ids collide".into())?;
    for seed in 0..100 {
        let a = split_dataset(&records, 0.9, seed).map_err(|e| e.to_string())?;
        let b = split_dataset(&records, 0.9, seed).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed}: not deterministic"))?;
        let train: HashSet<&str> = a
            .of_split(Split::Train)
            .map(|e| e.patch_id.as_str())
            .collect();
        let val: HashSet<&str> = a
            .of_split(Split::Validation)
            .map(|e| e.patch_id.as_str())
            .collect();
        ensure(train.len() == 2003 && val.len() == 223, || {
            format!("seed {seed}: {}/{}", train.len(), val.len())
        })?;
        ensure(train.is_disjoint(&val), || format!("seed {seed}: overlap"))?;
        ensure(train.len() + val.len() == all.len(), || {
            format!("seed {seed}: patches lost")
        })?;
    }
    Ok("2226 -> 2003/223, disjoint and reproducible for seeds 0..100".into())
}

fn cli(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_glacier-cgan"))
        .args(args)
        .arg("--out-root")
        .arg(root)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "{args:?}: {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn end_to_end(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = root.join("small.config");
    fs::write(
        &config,
        "epochs = 30\ncheckpoint_interval = 15\ngenerator_base_channels = 4\n\
         generator_depth = 6\ndiscriminator_base_channels = 4\nseed = 2\n",
    )
    .map_err(|e| e.to_string())?;
    cli(
        root,
        &[
            "synth-data",
            "--scenes",
            "2",
            "--width",
            "128",
            "--height",
            "128",
            "--patch-size",
            "64",
            "--seed",
            "9",
        ],
    )?;
    cli(root, &["train", "--config", config.to_str().unwrap()])?;
    cli(root, &["eval"])?;
    let run = root.join("run");
    let mut files: Vec<String> = fs::read_dir(&run)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("ckpt_") || n == "loss_log.csv" || n == "metrics.csv")
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|n| {
            fs::read(run.join(&n))
                .map(|b| (n, b))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn reproducibility() -> Outcome {
    let a = TempDir::new().map_err(|e| e.to_string())?;
    let b = TempDir::new().map_err(|e| e.to_string())?;
    let first = end_to_end(a.path())?;
    let second = end_to_end(b.path())?;
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    ensure(
        names
            == [
                "ckpt_epoch15.bin",
                "ckpt_epoch30.bin",
                "loss_log.csv",
                "metrics.csv",
            ],
        || format!("outputs {names:?}"),
    )?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("byte-identical: {}", names.join(", ")))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "gradient suite", gradients),
        (2, "architecture contracts", architecture),
        (3, "variant matrix", variant_matrix),
        (4, "metric oracles", metric_oracles),
        (5, "overfit convergence", overfit),
        (6, "desk-scale learning signal", desk_scale),
        (7, "split arithmetic", split_arithmetic),
        (8, "reproducibility", reproducibility),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
