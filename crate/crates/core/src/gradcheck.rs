//! Central finite-difference checks of the reverse-mode gradients.
//!
//! Every case builds a scalar loss from some leaf tensors; the analytic
//! gradient from [`Graph::backward`] is compared entry by entry with
//! `(f(x + h) − f(x − h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, DropoutMode, Graph, NormMode, RunningStats, Var};
use crate::error::Result;
use crate::kernels::ConvGeometry;
use crate::loss::{discriminator_loss_graph, generator_loss_graph};
use crate::nn::{
    build_discriminator, build_generator, discriminator_forward_graph, generator_forward_graph,
    ForwardMode, NetworkState, Variant,
};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding do not divide by ~0.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= TOLERANCE && self.entries_checked > 0
    }
}

/// Builds the loss from `inputs`, returning the loss node and the leaf of
/// each input.
pub trait LossBuilder {
    fn build(&self, graph: &mut Graph, inputs: &[Tensor]) -> Result<(Var, Vec<Var>)>;
}

impl<F: Fn(&mut Graph, &[Tensor]) -> Result<(Var, Vec<Var>)>> LossBuilder for F {
    fn build(&self, graph: &mut Graph, inputs: &[Tensor]) -> Result<(Var, Vec<Var>)> {
        self(graph, inputs)
    }
}

fn evaluate<B: LossBuilder + ?Sized>(builder: &B, inputs: &[Tensor]) -> Result<f64> {
    let mut graph = Graph::new();
    let (loss, _) = builder.build(&mut graph, inputs)?;
    Ok(graph.value(loss).item())
}

/// Compares analytic and numeric gradients. With `per_tensor = Some(k)`
/// only `k` randomly chosen entries of each input are probed.
pub fn check<B: LossBuilder + ?Sized>(
    name: &str,
    builder: &B,
    inputs: Vec<Tensor>,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheck> {
    let mut graph = Graph::new();
    let (loss, leaves) = builder.build(&mut graph, &inputs)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| grads.wrt(v)).collect();

    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = inputs;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..inputs.len() {
        let n = inputs[t].numel();
        let entries: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|_| pick.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + STEP;
            let up = evaluate(builder, &inputs)?;
            inputs[t].data_mut()[i] = orig - STEP;
            let down = evaluate(builder, &inputs)?;
            inputs[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[t].data()[i], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_relative_error: worst,
        entries_checked: checked,
    })
}

/// Reduces a tensor node to a scalar through a fixed random projection,
/// so every output entry carries a distinct weight.
fn project(graph: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = graph.value(x).shape().to_vec();
    let r = graph.leaf(Tensor::uniform(
        &shape,
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed),
    ));
    let prod = graph.mul(x, r)?;
    Ok(graph.sum(prod))
}

fn leaves(graph: &mut Graph, inputs: &[Tensor]) -> Vec<Var> {
    inputs.iter().map(|t| graph.leaf(t.clone())).collect()
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn unit(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 0.05, 0.95, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn conv_case(
    geom: ConvGeometry,
    transpose: bool,
    c_in: usize,
    c_out: usize,
    hw: usize,
) -> Result<GradCheck> {
    let k = geom.kernel;
    let w_shape = if transpose {
        [c_in, c_out, k, k]
    } else {
        [c_out, c_in, k, k]
    };
    let inputs = vec![
        randn(&[2, c_in, hw, hw], 1),
        randn(&w_shape, 2),
        randn(&[c_out], 3),
    ];
    let name = format!(
        "{} k{} s{} p{} op{}",
        if transpose {
            "conv_transpose2d"
        } else {
            "conv2d"
        },
        k,
        geom.stride,
        geom.padding,
        geom.output_padding
    );
    let build = move |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let y = if transpose {
            g.conv_transpose2d(v[0], v[1], v[2], geom)?
        } else {
            g.conv2d(v[0], v[1], v[2], geom)?
        };
        Ok((project(g, y, 4)?, v))
    };
    check(&name, &build, inputs, None, 0)
}

fn batch_norm_case(mode: NormMode) -> Result<GradCheck> {
    let inputs = vec![randn(&[2, 3, 4, 4], 5), unit(&[3], 6), randn(&[3], 7)];
    let build = move |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let mut stats = RunningStats {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![0.5, 1.5, 2.0],
        };
        let y = g.batch_norm(v[0], v[1], v[2], mode, &mut stats)?;
        Ok((project(g, y, 8)?, v))
    };
    check(&format!("batch_norm {mode:?}"), &build, inputs, None, 0)
}

fn activation_case(kind: Activation) -> Result<GradCheck> {
    // keep inputs away from the kink at zero
    let x = randn(&[1, 2, 5, 5], 9).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let build = move |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let y = g.activation(v[0], kind);
        Ok((project(g, y, 10)?, v))
    };
    check(&format!("activation {kind:?}"), &build, vec![x], None, 0)
}

fn dropout_case() -> Result<GradCheck> {
    let build = |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let y = g.dropout(
            v[0],
            0.5,
            DropoutMode::Sample,
            &mut ChaCha8Rng::seed_from_u64(11),
        )?;
        Ok((project(g, y, 12)?, v))
    };
    check(
        "dropout (fixed mask)",
        &build,
        vec![randn(&[1, 3, 4, 4], 13)],
        None,
        0,
    )
}

fn concat_mul_case() -> Result<GradCheck> {
    let build = |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let c = g.concat_channels(v[0], v[1])?;
        let m = g.mul(c, v[2])?;
        Ok((project(g, m, 14)?, v))
    };
    let inputs = vec![
        randn(&[2, 1, 3, 3], 15),
        randn(&[2, 2, 3, 3], 16),
        randn(&[2, 3, 3, 3], 17),
    ];
    check("concat + mul", &build, inputs, None, 0)
}

fn loss_cases() -> Result<Vec<GradCheck>> {
    let nll = |complement: bool| {
        move |g: &mut Graph, x: &[Tensor]| {
            let v = leaves(g, x);
            Ok((g.mean_neg_log(v[0], complement), v))
        }
    };
    let l1 = |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        Ok((g.l1_mean(v[0], v[1])?, v))
    };
    let d_loss = |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        Ok((discriminator_loss_graph(g, v[0], v[1])?.0, v))
    };
    let variant = Variant::L150Gan50.config();
    let g_loss = move |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        Ok((
            generator_loss_graph(g, v[0], v[1], v[2], &variant)?.total,
            v,
        ))
    };
    let weighted = |g: &mut Graph, x: &[Tensor]| {
        let v = leaves(g, x);
        let a = g.sum(v[0]);
        let b = g.sum(v[1]);
        Ok((g.weighted_sum(&[(a, 0.3), (b, -2.0)])?, v))
    };
    let a = unit(&[1, 1, 4, 4], 18);
    let b = unit(&[1, 1, 4, 4], 19);
    let img = randn(&[1, 1, 8, 8], 20);
    // target offset by ±0.5 so |fake − target| stays away from zero
    let target = img.map(|v| if v >= 0.0 { v - 0.5 } else { v + 0.5 });
    Ok(vec![
        check("mean -ln(p)", &nll(false), vec![a.clone()], None, 0)?,
        check("mean -ln(1-p)", &nll(true), vec![a.clone()], None, 0)?,
        check("l1_mean", &l1, vec![img.clone(), target.clone()], None, 0)?,
        check(
            "weighted_sum",
            &weighted,
            vec![a.clone(), b.clone()],
            None,
            0,
        )?,
        check("discriminator loss", &d_loss, vec![a.clone(), b], None, 0)?,
        check("generator loss", &g_loss, vec![a, img, target], None, 0)?,
    ])
}

fn set_params(state: &mut NetworkState, values: &[Tensor]) {
    for (p, v) in state.params_mut().into_iter().zip(values) {
        *p = v.clone();
    }
}

fn scaled_network(mut state: NetworkState, seed: u64) -> NetworkState {
    // Initial weights of std 0.02 make downstream signals tiny; unit-scale
    // weights exercise the backward pass at realistic magnitudes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in state.params_mut() {
        let fresh = Tensor::randn(p.shape(), 0.0, 0.3, &mut rng);
        *p = fresh;
    }
    state
}

fn generator_case(samples: Option<usize>) -> Result<GradCheck> {
    let g = build_generator(
        &Variant::Orig.config(),
        2,
        4,
        &mut ChaCha8Rng::seed_from_u64(21),
    )?;
    let g = scaled_network(g, 22);
    let mask = Tensor::uniform(
        &[1, 1, 16, 16],
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(23),
    )
    .map(f64::signum);
    let params: Vec<Tensor> = g.params().into_iter().cloned().collect();
    let build = move |graph: &mut Graph, x: &[Tensor]| {
        let mut state = g.clone();
        set_params(&mut state, x);
        let bound = state.bind(graph);
        let m = graph.leaf(mask.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let out =
            generator_forward_graph(&mut state, graph, &bound, m, ForwardMode::Train, &mut rng)?;
        Ok((project(graph, out, 25)?, bound.vars))
    };
    check("generator 16x16 (depth 4)", &build, params, samples, 26)
}

fn discriminator_case(
    variant: Variant,
    extent: usize,
    samples: Option<usize>,
) -> Result<GradCheck> {
    let d = build_discriminator(&variant.config(), 2, &mut ChaCha8Rng::seed_from_u64(27))?;
    let d = scaled_network(d, 28);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mask = Tensor::uniform(&[1, 1, extent, extent], -1.0, 1.0, &mut rng).map(f64::signum);
    let image = Tensor::uniform(&[1, 1, extent, extent], -1.0, 1.0, &mut rng);
    let params: Vec<Tensor> = d.params().into_iter().cloned().collect();
    let build = move |graph: &mut Graph, x: &[Tensor]| {
        let mut state = d.clone();
        set_params(&mut state, x);
        let bound = state.bind(graph);
        let m = graph.leaf(mask.clone());
        let i = graph.leaf(image.clone());
        let out = discriminator_forward_graph(&mut state, graph, &bound, m, i, NormMode::Train)?;
        Ok((graph.mean_neg_log(out, false), bound.vars))
    };
    let name = format!(
        "discriminator {extent}x{extent} (k{})",
        variant.config().discriminator_kernel
    );
    check(&name, &build, params, samples, 30)
}

fn generate_train(g: &NetworkState, mask: &Tensor, dropout_seed: u64) -> Result<Tensor> {
    let mut graph = Graph::new();
    let mut state = g.clone();
    let bound = state.bind(&mut graph);
    let m = graph.leaf(mask.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let out = generator_forward_graph(
        &mut state,
        &mut graph,
        &bound,
        m,
        ForwardMode::Train,
        &mut rng,
    )?;
    Ok(graph.value(out).clone())
}

/// Generator objective through both networks; gradients w.r.t. the
/// generator parameters.
fn cgan_case(samples: Option<usize>) -> Result<GradCheck> {
    let cfg = Variant::Dis3.config();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = scaled_network(build_generator(&cfg, 2, 4, &mut rng)?, 32);
    let d = scaled_network(build_discriminator(&cfg, 2, &mut rng)?, 33);
    let mask = Tensor::uniform(&[1, 1, 16, 16], -1.0, 1.0, &mut rng).map(f64::signum);
    let signs = Tensor::uniform(&[1, 1, 16, 16], -1.0, 1.0, &mut rng).map(f64::signum);
    // Target sits 0.05 from the unperturbed output: the L1 term stays small
    // (a large loss value drowns small gradients in rounding) and clear of
    // the kink of |·|.
    let fake = generate_train(&g, &mask, 34)?;
    let target = Tensor::new(
        fake.shape(),
        fake.data()
            .iter()
            .zip(signs.data())
            .map(|(f, s)| f + 0.05 * s)
            .collect(),
    )?;
    let params: Vec<Tensor> = g.params().into_iter().cloned().collect();
    let build = move |graph: &mut Graph, x: &[Tensor]| {
        let mut gs = g.clone();
        let mut ds = d.clone();
        set_params(&mut gs, x);
        let gb = gs.bind(graph);
        let db = ds.bind(graph);
        let m = graph.leaf(mask.clone());
        let t = graph.leaf(target.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let fake = generator_forward_graph(&mut gs, graph, &gb, m, ForwardMode::Train, &mut rng)?;
        let score = discriminator_forward_graph(&mut ds, graph, &db, m, fake, NormMode::Train)?;
        Ok((
            generator_loss_graph(graph, score, fake, t, &cfg)?.total,
            gb.vars,
        ))
    };
    check(
        "generator objective through discriminator 16x16",
        &build,
        params,
        samples,
        35,
    )
}

/// Every op check plus the composite networks; composite cases probe
/// `samples` entries per parameter tensor.
pub fn standard_suite(samples: usize) -> Result<Vec<GradCheck>> {
    let mut out = vec![
        conv_case(ConvGeometry::new(4, 2, 1), false, 2, 3, 8)?,
        conv_case(ConvGeometry::new(3, 1, 1), false, 2, 2, 5)?,
        conv_case(ConvGeometry::new(5, 2, 2), false, 1, 2, 8)?,
        conv_case(ConvGeometry::new(4, 2, 1), true, 3, 2, 3)?,
        conv_case(
            ConvGeometry::new(5, 2, 2).with_output_padding(1),
            true,
            2,
            2,
            3,
        )?,
        batch_norm_case(NormMode::Train)?,
        batch_norm_case(NormMode::Infer)?,
    ];
    for kind in [
        Activation::LeakyRelu(0.2),
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        out.push(activation_case(kind)?);
    }
    out.push(dropout_case()?);
    out.push(concat_mul_case()?);
    out.extend(loss_cases()?);
    out.push(generator_case(Some(samples))?);
    out.push(discriminator_case(Variant::Dis3, 16, Some(samples))?);
    out.push(discriminator_case(Variant::Orig, 32, Some(samples))?);
    out.push(cgan_case(Some(samples))?);
    Ok(out)
}
