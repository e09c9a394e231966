//! Layer tables for the U-Net generator and the PatchGAN discriminator, and
//! the parameter containers that instantiate them.

use rand::Rng;

use crate::autodiff::{Activation, RunningStats};
use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::nn::variant::VariantConfig;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DECODER_DROPOUT: f64 = 0.5;
pub const INIT_STD: f64 = 0.02;
/// Encoder depth of the full-size generator (8 encoder + 8 decoder layers).
pub const GENERATOR_DEPTH: usize = 8;
pub const DEFAULT_BASE_CHANNELS: usize = 64;

/// Width multipliers of the encoder, relative to the base channel count.
const CHANNEL_PLAN: [usize; 8] = [1, 2, 4, 8, 8, 8, 8, 8];
const DISCRIMINATOR_STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
const DISCRIMINATOR_PLAN: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkRole {
    Generator,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
    pub has_bias: bool,
    pub activation: Activation,
    /// Dropout rate; zero means no dropout layer.
    pub dropout: f64,
    /// Index of the earlier layer whose output is concatenated (after this
    /// layer's main input) to form this layer's input.
    pub skip_source: Option<usize>,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.geometry.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, k, k],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, k, k],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Number of stride-2 encoder layers of a generator.
    pub fn encoder_depth(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .count()
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }
}

/// Padding that halves (conv) or doubles (transposed conv, with the returned
/// output padding) an even extent under stride 2.
pub fn halving_padding(kernel: usize) -> (usize, usize) {
    let padding = (kernel - 1) / 2;
    let output_padding = 2 + 2 * padding - kernel;
    (padding, output_padding)
}

/// Layer table of a U-Net generator with `depth` encoder layers.
pub fn generator_spec(kernel: usize, base_channels: usize, depth: usize) -> Result<NetworkSpec> {
    if base_channels == 0 {
        return Err(Error::InvalidArgument(
            "base_channels must be at least 1 (zero-channel layer)".into(),
        ));
    }
    if !(2..=GENERATOR_DEPTH).contains(&depth) {
        return Err(Error::InvalidArgument(format!(
            "generator depth {depth} outside 2..={GENERATOR_DEPTH}"
        )));
    }
    if !(2..=7).contains(&kernel) {
        return Err(Error::InvalidArgument(format!(
            "generator kernel {kernel} unsupported"
        )));
    }
    let (padding, output_padding) = halving_padding(kernel);
    let enc: Vec<usize> = CHANNEL_PLAN[..depth]
        .iter()
        .map(|m| m * base_channels)
        .collect();
    let mut layers = Vec::with_capacity(2 * depth);
    for (i, &out) in enc.iter().enumerate() {
        let first = i == 0;
        let bottleneck = i == depth - 1;
        layers.push(LayerSpec {
            kind: LayerKind::Conv,
            geometry: ConvGeometry::new(kernel, 2, padding),
            in_channels: if first { 1 } else { enc[i - 1] },
            out_channels: out,
            // The bottleneck is 1×1 per sample; see README.
            batch_norm: !first && !bottleneck,
            has_bias: first || bottleneck,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
            dropout: 0.0,
            skip_source: None,
        });
    }
    for j in 1..=depth {
        let last = j == depth;
        let in_channels = if j == 1 {
            enc[depth - 1]
        } else {
            2 * enc[depth - j]
        };
        let out_channels = if last { 1 } else { enc[depth - 1 - j] };
        let (activation, dropout) = match j {
            _ if last => (Activation::Tanh, 0.0),
            1..=3 => (Activation::Relu, DECODER_DROPOUT),
            _ => (Activation::LeakyRelu(LEAKY_SLOPE), 0.0),
        };
        layers.push(LayerSpec {
            kind: LayerKind::ConvTranspose,
            geometry: ConvGeometry::new(kernel, 2, padding).with_output_padding(output_padding),
            in_channels,
            out_channels,
            batch_norm: !last,
            has_bias: last,
            activation,
            dropout,
            skip_source: (j > 1).then(|| depth - j),
        });
    }
    Ok(NetworkSpec {
        role: NetworkRole::Generator,
        layers,
    })
}

/// Layer table of the 5-layer PatchGAN discriminator over `mask ⊕ image`.
pub fn discriminator_spec(kernel: usize, base_channels: usize) -> Result<NetworkSpec> {
    if base_channels == 0 {
        return Err(Error::InvalidArgument(
            "base_channels must be at least 1 (zero-channel layer)".into(),
        ));
    }
    if kernel < 2 {
        return Err(Error::InvalidArgument(format!(
            "discriminator kernel {kernel} unsupported"
        )));
    }
    let widths: Vec<usize> = DISCRIMINATOR_PLAN
        .iter()
        .map(|m| m * base_channels)
        .collect();
    let layers = DISCRIMINATOR_STRIDES
        .iter()
        .enumerate()
        .map(|(i, &stride)| {
            let last = i == DISCRIMINATOR_STRIDES.len() - 1;
            LayerSpec {
                kind: LayerKind::Conv,
                geometry: ConvGeometry::new(kernel, stride, 1),
                in_channels: if i == 0 { 2 } else { widths[i - 1] },
                out_channels: if last { 1 } else { widths[i] },
                batch_norm: i != 0 && !last,
                has_bias: i == 0 || last,
                activation: if last {
                    Activation::Sigmoid
                } else {
                    Activation::LeakyRelu(LEAKY_SLOPE)
                },
                dropout: 0.0,
                skip_source: None,
            }
        })
        .collect();
    Ok(NetworkSpec {
        role: NetworkRole::Discriminator,
        layers,
    })
}

/// Receptive field of one output unit of a stack of `(kernel, stride)`
/// layers, via `rf ← (rf − 1)·s + k` from the top layer down.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    layers.iter().rev().fold(1, |rf, &(k, s)| (rf - 1) * s + k)
}

/// Spatial output extent of the discriminator for an `extent`-wide input.
pub fn discriminator_output_extent(kernel: usize, extent: usize) -> Option<usize> {
    DISCRIMINATOR_STRIDES
        .iter()
        .try_fold(extent, |n, &s| ConvGeometry::new(kernel, s, 1).conv_out(n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub norm: Option<NormParams>,
}

/// A network's layer table together with its learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams>,
}

impl NetworkState {
    /// Gaussian(0, 0.02) weights, zero biases, unit gamma, zero beta.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| LayerParams {
                weight: Tensor::randn(&l.weight_shape(), 0.0, INIT_STD, rng),
                bias: l.has_bias.then(|| Tensor::zeros(&[l.out_channels])),
                norm: l.batch_norm.then(|| NormParams {
                    gamma: Tensor::full(&[l.out_channels], 1.0),
                    beta: Tensor::zeros(&[l.out_channels]),
                    running: RunningStats::new(l.out_channels),
                }),
            })
            .collect();
        Self { spec, layers }
    }

    /// Checks that every parameter tensor matches its layer descriptor.
    pub fn validate(&self) -> Result<()> {
        if self.spec.layers.len() != self.layers.len() {
            return Err(Error::shape(
                "network_state",
                format!(
                    "{} layer specs but {} parameter sets",
                    self.spec.layers.len(),
                    self.layers.len()
                ),
            ));
        }
        for (i, (s, p)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let c = s.out_channels;
            if p.weight.shape() != s.weight_shape() {
                return Err(Error::shape(
                    "network_state",
                    format!(
                        "layer {i} weight {:?}, expected {:?}",
                        p.weight.shape(),
                        s.weight_shape()
                    ),
                ));
            }
            if s.has_bias != p.bias.is_some() || p.bias.as_ref().is_some_and(|b| b.shape() != [c]) {
                return Err(Error::shape(
                    "network_state",
                    format!("layer {i} bias does not match spec"),
                ));
            }
            let norm_ok = match &p.norm {
                None => !s.batch_norm,
                Some(n) => {
                    s.batch_norm
                        && n.gamma.shape() == [c]
                        && n.beta.shape() == [c]
                        && n.running.mean.len() == c
                        && n.running.var.len() == c
                }
            };
            if !norm_ok {
                return Err(Error::shape(
                    "network_state",
                    format!("layer {i} normalization does not match spec"),
                ));
            }
        }
        Ok(())
    }

    /// Trainable tensors in canonical order: per layer weight, bias, gamma, beta.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.extend(l.bias.as_ref());
            if let Some(n) = &l.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.extend(l.bias.as_mut());
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}

/// Builds an initialized generator for `cfg` with the given width and depth.
pub fn build_generator<R: Rng + ?Sized>(
    cfg: &VariantConfig,
    base_channels: usize,
    depth: usize,
    rng: &mut R,
) -> Result<NetworkState> {
    let spec = generator_spec(cfg.generator_kernel, base_channels, depth)?;
    Ok(NetworkState::init(spec, rng))
}

/// Builds an initialized discriminator for `cfg`.
pub fn build_discriminator<R: Rng + ?Sized>(
    cfg: &VariantConfig,
    base_channels: usize,
    rng: &mut R,
) -> Result<NetworkState> {
    let spec = discriminator_spec(cfg.discriminator_kernel, base_channels)?;
    Ok(NetworkState::init(spec, rng))
}
