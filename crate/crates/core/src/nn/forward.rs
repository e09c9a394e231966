//! Forward passes of generator and discriminator on a [`Graph`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_channels, DropoutMode, Graph, NormMode, RunningStats, Var};
use crate::error::{Error, Result};
use crate::nn::architecture::{LayerKind, NetworkRole, NetworkState};
use crate::tensor::Tensor;

/// How the generator runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics (folded into running averages) and sampled dropout.
    Train,
    /// Running statistics and sampled dropout; dropout is the noise source.
    StochasticInfer,
}

impl ForwardMode {
    fn norm(self) -> NormMode {
        match self {
            ForwardMode::Train => NormMode::Train,
            ForwardMode::StochasticInfer => NormMode::Infer,
        }
    }
}

/// Parameter leaves of one network on a graph, in [`NetworkState::params`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Output of a traced forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    /// Output of every layer, after activation.
    pub layers: Vec<Var>,
}

impl NetworkState {
    /// Registers every trainable tensor as a graph leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self
                .params()
                .into_iter()
                .map(|t| graph.leaf(t.clone()))
                .collect(),
        }
    }

    /// Runs the layer table on `input`. Returns the trace together with the
    /// running statistics each normalized layer would hold afterwards (only
    /// changed in [`NormMode::Train`]).
    pub(crate) fn run_layers<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        input: Var,
        norm: NormMode,
        rng: &mut R,
        ablate_skip: Option<usize>,
    ) -> Result<(ForwardTrace, Vec<Option<RunningStats>>)> {
        let mut cursor = params.vars.iter().copied();
        let mut next = || {
            cursor.next().ok_or_else(|| {
                Error::InvalidArgument("bound parameter list shorter than network".into())
            })
        };
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (i, (spec, layer)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            if let Some(src) = spec.skip_source {
                let skip = if ablate_skip == Some(src) {
                    let zeros = Tensor::zeros(graph.value(outputs[src]).shape());
                    graph.leaf(zeros)
                } else {
                    outputs[src]
                };
                x = graph.concat_channels(x, skip)?;
            }
            let weight = next()?;
            let bias = match spec.has_bias {
                true => next()?,
                false => graph.leaf(Tensor::zeros(&[spec.out_channels])),
            };
            x = match spec.kind {
                LayerKind::Conv => graph.conv2d(x, weight, bias, spec.geometry),
                LayerKind::ConvTranspose => graph.conv_transpose2d(x, weight, bias, spec.geometry),
            }
            .map_err(|e| match e {
                Error::Shape { op, detail } => Error::Shape {
                    op,
                    detail: format!("layer {}: {detail}", i + 1),
                },
                other => other,
            })?;
            match layer.norm.as_ref() {
                Some(np) => {
                    let gamma = next()?;
                    let beta = next()?;
                    let mut running = np.running.clone();
                    x = graph.batch_norm(x, gamma, beta, norm, &mut running)?;
                    stats.push(Some(running));
                }
                None => stats.push(None),
            }
            if spec.dropout > 0.0 {
                x = graph.dropout(x, spec.dropout, DropoutMode::Sample, rng)?;
            }
            x = graph.activation(x, spec.activation);
            outputs.push(x);
        }
        Ok((
            ForwardTrace {
                output: x,
                layers: outputs,
            },
            stats,
        ))
    }

    fn absorb_stats(&mut self, stats: Vec<Option<RunningStats>>) {
        for (layer, s) in self.layers.iter_mut().zip(stats) {
            if let (Some(np), Some(s)) = (layer.norm.as_mut(), s) {
                np.running = s;
            }
        }
    }

    /// [`Self::run_layers`] that commits updated running statistics.
    pub(crate) fn run_layers_mut<R: Rng + ?Sized>(
        &mut self,
        graph: &mut Graph,
        params: &BoundParams,
        input: Var,
        norm: NormMode,
        rng: &mut R,
        ablate_skip: Option<usize>,
    ) -> Result<ForwardTrace> {
        let (trace, stats) = self.run_layers(graph, params, input, norm, rng, ablate_skip)?;
        if norm == NormMode::Train {
            self.absorb_stats(stats);
        }
        Ok(trace)
    }

    fn check_role(&self, role: NetworkRole) -> Result<()> {
        if self.spec.role != role {
            return Err(Error::InvalidArgument(format!(
                "expected a {role:?} network, got {:?}",
                self.spec.role
            )));
        }
        Ok(())
    }
}

/// Validates a generator input mask: `N × 1 × H × W` with `H`, `W`
/// divisible by `2^depth`.
pub fn check_generator_input(state: &NetworkState, mask: &Tensor) -> Result<()> {
    let (_, c, h, w) = mask.dims4("generator_forward")?;
    if c != 1 {
        return Err(Error::shape(
            "generator_forward",
            format!("mask must be single-channel, got {c} channels"),
        ));
    }
    let factor = 1usize << state.spec.encoder_depth();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "generator_forward",
            format!("spatial dims {h}x{w} not divisible by {factor}"),
        ));
    }
    Ok(())
}

/// Generator forward on a graph; `mask` must already be a leaf.
pub fn generator_forward_graph<R: Rng + ?Sized>(
    state: &mut NetworkState,
    graph: &mut Graph,
    params: &BoundParams,
    mask: Var,
    mode: ForwardMode,
    rng: &mut R,
) -> Result<Var> {
    state.check_role(NetworkRole::Generator)?;
    check_generator_input(state, graph.value(mask))?;
    Ok(state
        .run_layers_mut(graph, params, mask, mode.norm(), rng, None)?
        .output)
}

/// Discriminator forward on a graph over the pair `(mask, image)`.
pub fn discriminator_forward_graph(
    state: &mut NetworkState,
    graph: &mut Graph,
    params: &BoundParams,
    mask: Var,
    image: Var,
    norm: NormMode,
) -> Result<Var> {
    state.check_role(NetworkRole::Discriminator)?;
    let (ms, is) = (graph.value(mask).shape(), graph.value(image).shape());
    if ms != is {
        return Err(Error::shape(
            "discriminator_forward",
            format!("mask {ms:?} and image {is:?} differ"),
        ));
    }
    let pair = graph.concat_channels(mask, image)?;
    // No dropout in the discriminator: the rng is never drawn from.
    Ok(state
        .run_layers_mut(
            graph,
            params,
            pair,
            norm,
            &mut ChaCha8Rng::seed_from_u64(0),
            None,
        )?
        .output)
}

/// Stand-alone generator forward returning the output tensor.
pub fn generator_forward<R: Rng + ?Sized>(
    state: &mut NetworkState,
    mask: &Tensor,
    mode: ForwardMode,
    rng: &mut R,
) -> Result<Tensor> {
    let mut graph = Graph::new();
    let params = state.bind(&mut graph);
    let m = graph.leaf(mask.clone());
    let out = generator_forward_graph(state, &mut graph, &params, m, mode, rng)?;
    Ok(graph.value(out).clone())
}

/// Stochastic inference that leaves `state` untouched.
pub fn generate<R: Rng + ?Sized>(
    state: &NetworkState,
    mask: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    state.check_role(NetworkRole::Generator)?;
    check_generator_input(state, mask)?;
    let mut graph = Graph::new();
    let params = state.bind(&mut graph);
    let m = graph.leaf(mask.clone());
    let (trace, _) = state.run_layers(&mut graph, &params, m, NormMode::Infer, rng, None)?;
    Ok(graph.value(trace.output).clone())
}

/// Stand-alone discriminator forward (running statistics) returning the
/// probability map.
pub fn discriminator_forward(
    state: &NetworkState,
    mask: &Tensor,
    image: &Tensor,
) -> Result<Tensor> {
    state.check_role(NetworkRole::Discriminator)?;
    if mask.shape() != image.shape() {
        return Err(Error::shape(
            "discriminator_forward",
            format!(
                "mask {:?} and image {:?} differ",
                mask.shape(),
                image.shape()
            ),
        ));
    }
    let mut graph = Graph::new();
    let params = state.bind(&mut graph);
    let pair = graph.leaf(concat_channels(mask, image)?);
    let (trace, _) = state.run_layers(
        &mut graph,
        &params,
        pair,
        NormMode::Infer,
        &mut ChaCha8Rng::seed_from_u64(0),
        None,
    )?;
    Ok(graph.value(trace.output).clone())
}

/// Every layer's output of an inference pass, for shape and locality checks.
pub fn trace_layers<R: Rng + ?Sized>(
    state: &NetworkState,
    input: &Tensor,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let mut graph = Graph::new();
    let params = state.bind(&mut graph);
    let x = graph.leaf(input.clone());
    let (trace, _) = state.run_layers(&mut graph, &params, x, NormMode::Infer, rng, None)?;
    Ok(trace
        .layers
        .iter()
        .map(|&v| graph.value(v).clone())
        .collect())
}

/// [`generate`] with the skip copy of encoder layer `skip_source` replaced
/// by zeros.
pub fn generate_ablated<R: Rng + ?Sized>(
    state: &NetworkState,
    mask: &Tensor,
    skip_source: usize,
    rng: &mut R,
) -> Result<Tensor> {
    state.check_role(NetworkRole::Generator)?;
    check_generator_input(state, mask)?;
    let mut graph = Graph::new();
    let params = state.bind(&mut graph);
    let m = graph.leaf(mask.clone());
    let (trace, _) = state.run_layers(
        &mut graph,
        &params,
        m,
        NormMode::Infer,
        rng,
        Some(skip_source),
    )?;
    Ok(graph.value(trace.output).clone())
}
