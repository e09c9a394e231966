use glacier_cgan::nn::{
    build_discriminator, build_generator, discriminator_forward, generate, generate_ablated,
    generator_forward, trace_layers, ForwardMode, Variant,
};
use glacier_cgan::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(h: usize, w: usize, seed: u64) -> Tensor {
    let u = Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng(seed));
    u.map(|v| if v < 0.5 { -1.0 } else { 1.0 })
}

#[test]
fn full_size_generator_output_range_and_bottleneck() {
    let cfg = Variant::Orig.config();
    let g = build_generator(&cfg, 4, 8, &mut rng(1)).unwrap();
    let mask = random_mask(256, 256, 2);
    let layers = trace_layers(&g, &mask, &mut rng(3)).unwrap();
    assert_eq!(layers[7].shape(), &[1, 32, 1, 1]);
    let out = layers.last().unwrap();
    assert_eq!(out.shape(), &[1, 1, 256, 256]);
    assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn encoder_halves_and_decoder_doubles() {
    let g = build_generator(&Variant::Orig.config(), 2, 6, &mut rng(1)).unwrap();
    let layers = trace_layers(&g, &random_mask(64, 64, 1), &mut rng(2)).unwrap();
    let sizes: Vec<usize> = layers.iter().map(|t| t.shape()[2]).collect();
    assert_eq!(sizes, vec![32, 16, 8, 4, 2, 1, 2, 4, 8, 16, 32, 64]);
}

#[test]
fn zero_final_layer_yields_zero_output() {
    let mut g = build_generator(&Variant::Orig.config(), 2, 5, &mut rng(4)).unwrap();
    let last = g.layers.last_mut().unwrap();
    last.weight = Tensor::zeros(last.weight.shape());
    let out = generate(&g, &random_mask(32, 32, 5), &mut rng(6)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_seed_controls_output() {
    let mut g = build_generator(&Variant::Orig.config(), 2, 5, &mut rng(7)).unwrap();
    let mask = random_mask(32, 32, 8);
    let a = generator_forward(&mut g.clone(), &mask, ForwardMode::Train, &mut rng(9)).unwrap();
    let b = generator_forward(&mut g.clone(), &mask, ForwardMode::Train, &mut rng(9)).unwrap();
    assert_eq!(a, b);
    let c = generator_forward(&mut g, &mask, ForwardMode::Train, &mut rng(10)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_forward_updates_running_stats_but_inference_does_not() {
    let mut g = build_generator(&Variant::Orig.config(), 2, 5, &mut rng(11)).unwrap();
    let mask = random_mask(32, 32, 12);
    let before = g.clone();
    generate(&g, &mask, &mut rng(1)).unwrap();
    generator_forward(&mut g, &mask, ForwardMode::StochasticInfer, &mut rng(1)).unwrap();
    assert_eq!(g, before);
    generator_forward(&mut g, &mask, ForwardMode::Train, &mut rng(1)).unwrap();
    assert_ne!(g, before);
}

#[test]
fn skip_connections_carry_information() {
    let g = build_generator(&Variant::Orig.config(), 2, 5, &mut rng(13)).unwrap();
    let mask = random_mask(32, 32, 14);
    let plain = generate(&g, &mask, &mut rng(15)).unwrap();
    for src in 0..4 {
        let out = generate_ablated(&g, &mask, src, &mut rng(15)).unwrap();
        assert!(
            out.max_abs_diff(&plain) > 0.0,
            "skip from encoder {src} has no effect"
        );
    }
}

#[test]
fn discriminator_patch_map() {
    let cfg = Variant::Orig.config();
    let d = build_discriminator(&cfg, 64, &mut rng(16)).unwrap();
    let mask = random_mask(256, 256, 17);
    let image = Tensor::uniform(&[1, 1, 256, 256], -1.0, 1.0, &mut rng(18));
    let out = discriminator_forward(&d, &mask, &image).unwrap();
    assert_eq!(out.shape(), &[1, 1, 30, 30]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn discriminator_output_extents_per_variant() {
    let mask = random_mask(64, 64, 19);
    let image = Tensor::uniform(&[1, 1, 64, 64], -1.0, 1.0, &mut rng(20));
    for (variant, extent) in [(Variant::Orig, 6), (Variant::Dis3, 8)] {
        let d = build_discriminator(&variant.config(), 4, &mut rng(21)).unwrap();
        let out = discriminator_forward(&d, &mask, &image).unwrap();
        assert_eq!(out.shape(), &[1, 1, extent, extent], "{variant}");
    }
}

#[test]
fn zero_final_discriminator_layer_gives_coin_flip() {
    let mut d = build_discriminator(&Variant::Orig.config(), 4, &mut rng(22)).unwrap();
    let last = d.layers.last_mut().unwrap();
    last.weight = Tensor::zeros(last.weight.shape());
    let mask = random_mask(64, 64, 23);
    let out = discriminator_forward(&d, &mask, &mask).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn discriminator_is_shift_covariant_in_the_interior() {
    let d = build_discriminator(&Variant::Orig.config(), 4, &mut rng(24)).unwrap();
    let (h, w) = (128, 128);
    let pair = Tensor::uniform(&[1, 2, h + 32, w], -1.0, 1.0, &mut rng(25));
    let a = pair.crop(0, 0, h, w).unwrap();
    let b = pair.crop(32, 0, h, w).unwrap();
    // layer 3 output: stride 8, so a 32 px input shift is a 4 px shift
    let fa = &trace_layers(&d, &a, &mut rng(0)).unwrap()[2];
    let fb = &trace_layers(&d, &b, &mut rng(0)).unwrap()[2];
    let (_, c, oh, ow) = fa.dims4("t").unwrap();
    let margin = 3;
    let mut checked = 0;
    for ch in 0..c {
        for y in margin..oh - 4 - margin {
            for x in margin..ow - margin {
                let va = fa.data()[(ch * oh + y + 4) * ow + x];
                let vb = fb.data()[(ch * oh + y) * ow + x];
                assert!((va - vb).abs() < 1e-12, "ch {ch} y {y} x {x}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 900);
}

#[test]
fn init_statistics() {
    let g = build_generator(&Variant::Orig.config(), 64, 8, &mut rng(26)).unwrap();
    let weights: Vec<f64> = g
        .layers
        .iter()
        .flat_map(|l| l.weight.data().iter().copied())
        .collect();
    assert!(weights.len() >= 1_000_000);
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let std = (weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 0.002, "mean {mean}");
    assert!((std - 0.02).abs() < 0.002, "std {std}");
    for l in g.layers.iter().filter_map(|l| l.norm.as_ref()) {
        assert!(l.gamma.data().iter().all(|&v| v == 1.0));
        assert!(l.beta.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn variants_produce_expected_shapes() {
    let mask = random_mask(64, 64, 27);
    for v in Variant::ALL {
        let cfg = v.config();
        let g = build_generator(&cfg, 2, 6, &mut rng(28)).unwrap();
        let d = build_discriminator(&cfg, 2, &mut rng(29)).unwrap();
        let out = generate(&g, &mask, &mut rng(30)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 64, 64], "{v}");
        assert!(discriminator_forward(&d, &mask, &out).is_ok(), "{v}");
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let g = build_generator(&Variant::Orig.config(), 2, 5, &mut rng(31)).unwrap();
    let err = generate(&g, &random_mask(48, 40, 32), &mut rng(0))
        .unwrap_err()
        .to_string();
    assert!(err.contains("divisible by 32"), "{err}");
    let two = Tensor::zeros(&[1, 2, 32, 32]);
    assert!(generate(&g, &two, &mut rng(0)).is_err());
    let d = build_discriminator(&Variant::Orig.config(), 2, &mut rng(33)).unwrap();
    assert!(generate(&d, &random_mask(32, 32, 0), &mut rng(0)).is_err());
}
