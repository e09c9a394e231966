//! Tape-based reverse-mode differentiation over the handful of operations the
//! generator and discriminator need.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and [`Graph::backward`] walks it once in reverse.

use log::debug;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LOG_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                // split form avoids exp overflow for large |x|
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Whether batch normalization uses batch statistics or running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Dropout behaviour. `Sample` is used both for training and for stochastic
/// inference, where dropout is the generator's only noise source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Sample,
    Identity,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weights: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        weights: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        mode: NormMode,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    MeanNegLog {
        input: Var,
        complement: bool,
    },
    L1Mean {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter. Constants are leaves whose gradient
    /// is simply never read.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(weights),
            self.value(bias),
            geom,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weights,
                bias,
                geom,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let out = kernels::conv_transpose2d(
            self.value(input),
            self.value(weights),
            self.value(bias),
            geom,
        )?;
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weights,
                bias,
                geom,
            },
        ))
    }

    /// Per-channel normalization. In `Train` mode the batch statistics are
    /// used and folded into `stats` with momentum [`BATCH_NORM_MOMENTUM`];
    /// in `Infer` mode `stats` is read only.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        stats: &mut RunningStats,
    ) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("batch_norm")?;
        for (name, t) in [("gamma", self.value(gamma)), ("beta", self.value(beta))] {
            if t.shape() != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!(
                        "{name} shape {:?} does not match channel count {c}",
                        t.shape()
                    ),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "running stats hold {} channels, input has {c}",
                    stats.mean.len()
                ),
            ));
        }
        let group = n * h * w;
        if mode == NormMode::Train && group < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_norm: normalization group of {group} element(s) per channel has undefined variance"
            )));
        }
        let plane = h * w;
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        s += x.data()[off..off + plane].iter().sum::<f64>();
                    }
                    let m = s / group as f64;
                    let mut sq = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        sq += x.data()[off..off + plane]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / group as f64;
                }
                for ch in 0..c {
                    let unbiased = var[ch] * group as f64 / (group - 1) as f64;
                    stats.mean[ch] = (1.0 - BATCH_NORM_MOMENTUM) * stats.mean[ch]
                        + BATCH_NORM_MOMENTUM * mean[ch];
                    stats.var[ch] = (1.0 - BATCH_NORM_MOMENTUM) * stats.var[ch]
                        + BATCH_NORM_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            NormMode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut normalized = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                mode,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = self.value(input).map(|v| kind.apply(v));
        self.push(out, Op::Activation { input, kind })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let x = self.value(input);
        let mask: Vec<f64> = if mode == DropoutMode::Identity || rate == 0.0 {
            vec![1.0; x.numel()]
        } else {
            let keep = 1.0 / (1.0 - rate);
            (0..x.numel())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.push(out, Op::Dropout { input, mask }))
    }

    /// Channel concatenation; `a` occupies the leading block.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape(), out)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    /// `mean(-ln p)` or, with `complement`, `mean(-ln(1 - p))`; the log
    /// argument is clamped below by [`LOG_EPS`].
    pub fn mean_neg_log(&mut self, input: Var, complement: bool) -> Var {
        let x = self.value(input);
        let mut clamped = 0usize;
        let mut acc = 0.0;
        for &v in x.data() {
            let arg = if complement { 1.0 - v } else { v };
            if arg < LOG_EPS {
                clamped += 1;
            }
            acc -= arg.max(LOG_EPS).ln();
        }
        if clamped > 0 {
            debug!(
                "mean_neg_log: clamped {clamped} of {} log arguments to {LOG_EPS}",
                x.numel()
            );
        }
        let out = Tensor::scalar(acc / x.numel() as f64);
        self.push(out, Op::MeanNegLog { input, complement })
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = l1_distance(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(out), Op::L1Mean { a, b }))
    }

    /// `Σ wᵢ·tᵢ` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("term of shape {:?} is not scalar", t.shape()),
                ));
            }
            acc += w * t.item();
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(dy);
                    continue;
                }
                Op::Conv2d {
                    input,
                    weights,
                    bias,
                    geom,
                } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*weights),
                        &dy,
                        *geom,
                    )?;
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weights, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::ConvTranspose2d {
                    input,
                    weights,
                    bias,
                    geom,
                } => {
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(
                        self.value(*input),
                        self.value(*weights),
                        &dy,
                        *geom,
                    )?;
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weights, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    mode,
                } => {
                    let (n, c, h, w) = dy.dims4("batch_norm")?;
                    let plane = h * w;
                    let m = (n * plane) as f64;
                    let g = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            let dys = &dy.data()[off..off + plane];
                            for (d, xh) in dys.iter().zip(&normalized[off..off + plane]) {
                                dgamma[ch] += d * xh;
                                dbeta[ch] += d;
                            }
                        }
                    }
                    let mut dx = vec![0.0; dy.numel()];
                    for ch in 0..c {
                        // With dx̂ = dy·γ: Σdx̂ = γ·dβ and Σdx̂·x̂ = γ·dγ.
                        let sum_dxh = g[ch] * dbeta[ch];
                        let sum_dxh_xh = g[ch] * dgamma[ch];
                        for b in 0..n {
                            let off = (b * c + ch) * plane;
                            for i in off..off + plane {
                                let dxh = dy.data()[i] * g[ch];
                                dx[i] = match mode {
                                    NormMode::Train => {
                                        inv_std[ch] / m
                                            * (m * dxh - sum_dxh - normalized[i] * sum_dxh_xh)
                                    }
                                    NormMode::Infer => dxh * inv_std[ch],
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::new(dy.shape(), dx)?);
                    accumulate(&mut grads, *gamma, Tensor::new(&[c], dgamma)?);
                    accumulate(&mut grads, *beta, Tensor::new(&[c], dbeta)?);
                }
                Op::Activation { input, kind } => {
                    let x = self.value(*input).data();
                    let y = node.value.data();
                    let dx: Vec<f64> = dy
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * kind.derivative(x[i], y[i]))
                        .collect();
                    accumulate(&mut grads, *input, Tensor::new(dy.shape(), dx)?);
                }
                Op::Dropout { input, mask } => {
                    let dx: Vec<f64> = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut grads, *input, Tensor::new(dy.shape(), dx)?);
                }
                Op::Concat { a, b } => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    accumulate(&mut grads, *a, dy.narrow_channels(0, ca)?);
                    if cb > 0 {
                        accumulate(&mut grads, *b, dy.narrow_channels(ca, cb)?);
                    }
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = dy
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    let db: Vec<f64> = dy
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(ta.shape(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(tb.shape(), db)?);
                }
                Op::Sum { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *input, Tensor::full(&shape, dy.item()));
                }
                Op::MeanNegLog { input, complement } => {
                    let x = self.value(*input);
                    let scale = dy.item() / x.numel() as f64;
                    let dx = x.map(|v| {
                        let arg = if *complement { 1.0 - v } else { v };
                        if arg < LOG_EPS {
                            0.0
                        } else if *complement {
                            scale / arg
                        } else {
                            -scale / arg
                        }
                    });
                    accumulate(&mut grads, *input, dx);
                }
                Op::L1Mean { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = dy.item() / ta.numel() as f64;
                    let da: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| scale * sign(x - y))
                        .collect();
                    let db: Vec<f64> = da.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, Tensor::new(ta.shape(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(tb.shape(), db)?);
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, Tensor::scalar(w * dy.item()));
                    }
                }
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta),
    }
}

/// Gradients of a scalar loss with respect to the graph's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

/// Concatenates two rank-4 tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, ca, ha, wa) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if na != nb {
        return Err(Error::shape(
            "concat_channels",
            format!("batch {na} vs {nb}"),
        ));
    }
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial {ha}x{wa} vs {hb}x{wb}"),
        ));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..na {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new(&[na, ca + cb, ha, wa], data)
}

/// Mean absolute elementwise difference.
pub fn l1_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "l1_distance",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(s / a.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_product_gradient_is_other_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let xt = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let w = g.leaf(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng));
        let x = g.leaf(xt.clone());
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w), xt);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full(&[3], 2.0));
        let unused = g.leaf(Tensor::full(&[2, 2], 5.0));
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full(&[3], 2.0));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::LeakyRelu(0.2).apply(-1.0), -0.2);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!(Activation::Sigmoid.apply(-800.0).is_finite());
    }

    #[test]
    fn batch_norm_rejects_single_element_group() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 2, 1, 1], 1.0));
        let gamma = g.leaf(Tensor::full(&[2], 1.0));
        let beta = g.leaf(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        assert!(g
            .batch_norm(x, gamma, beta, NormMode::Train, &mut stats)
            .is_err());
        assert!(g
            .batch_norm(x, gamma, beta, NormMode::Infer, &mut stats)
            .is_ok());
    }

    #[test]
    fn batch_norm_constant_input_yields_beta() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[2, 1, 3, 3], 4.2));
        let gamma = g.leaf(Tensor::full(&[1], 1.0));
        let beta = g.leaf(Tensor::full(&[1], 3.0));
        let mut stats = RunningStats::new(1);
        let y = g
            .batch_norm(x, gamma, beta, NormMode::Train, &mut stats)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn batch_norm_updates_running_stats() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        let gamma = g.leaf(Tensor::full(&[1], 1.0));
        let beta = g.leaf(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        g.batch_norm(x, gamma, beta, NormMode::Train, &mut stats)
            .unwrap();
        // batch mean 2, unbiased variance 2
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[4], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.dropout(x, 1.0, DropoutMode::Sample, &mut rng).is_err());
        let y = g.dropout(x, 0.0, DropoutMode::Sample, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn concat_with_empty_block() {
        let a = Tensor::full(&[1, 2, 3, 3], 1.5);
        let e = Tensor::zeros(&[1, 0, 3, 3]);
        assert_eq!(concat_channels(&a, &e).unwrap(), a);
        let b = Tensor::zeros(&[1, 1, 2, 3]);
        assert!(concat_channels(&a, &b).is_err());
    }
}
