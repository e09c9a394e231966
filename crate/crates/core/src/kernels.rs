//! Raw convolution kernels (im2col + GEMM) shared by the forward and
//! backward passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    /// Ignored by `conv2d`.
    pub output_padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (self.stride > 0 && padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// `(n - 1) s - 2p + k + output_padding`, or `None` when non-positive.
    pub fn conv_transpose_out(&self, n: usize) -> Option<usize> {
        let grown = (n.checked_sub(1)?) * self.stride + self.kernel + self.output_padding;
        grown.checked_sub(2 * self.padding).filter(|&v| v > 0)
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: kernel and stride must be positive, got k={} s={}",
                self.kernel, self.stride
            )));
        }
        if self.output_padding >= self.stride && self.output_padding > 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers, where
/// `op(x)` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths were asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `channels × h × w` image into a `(channels·k·k) × (oh·ow)`
/// patch matrix.
fn im2col(
    x: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let k = g.kernel;
    let mut cols = vec![0.0; channels * k * k * oh * ow];
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
    x: &mut [f64],
) {
    let k = g.kernel;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &'static str, bias: &Tensor, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(
            op,
            format!(
                "bias shape {:?} does not match out-channels {channels}",
                bias.shape()
            ),
        ));
    }
    Ok(())
}

/// Output shape of `conv2d`, validating every dimension.
pub fn conv2d_shape(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: ConvGeometry,
) -> Result<[usize; 4]> {
    g.validate("conv2d")?;
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, wc, kh, kw) = weights.dims4("conv2d")?;
    if kh != g.kernel || kw != g.kernel {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel dims {kh}x{kw} differ from declared kernel {}",
                g.kernel
            ),
        ));
    }
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("in-channels: input has {c}, weights expect {wc}"),
        ));
    }
    check_bias("conv2d", bias, o)?;
    let oh = g.conv_out(h).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("height {h} too small for kernel {}", g.kernel),
        )
    })?;
    let ow = g.conv_out(w).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("width {w} too small for kernel {}", g.kernel),
        )
    })?;
    Ok([n, o, oh, ow])
}

/// Cross-correlation of `input (N×C×H×W)` with `weights (O×C×k×k)` plus bias.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, g: ConvGeometry) -> Result<Tensor> {
    let [n, o, oh, ow] = conv2d_shape(input, weights, bias, g)?;
    let (_, c, h, w) = input.dims4("conv2d")?;
    let ckk = c * g.kernel * g.kernel;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        let cols = im2col(x, c, h, w, g, oh, ow);
        let y = &mut out[b * o * oh * ow..(b + 1) * o * oh * ow];
        for (oc, row) in y.chunks_mut(oh * ow).enumerate() {
            row.fill(bias.data()[oc]);
        }
        gemm(o, ckk, oh * ow, weights.data(), false, &cols, false, 1.0, y);
    }
    Tensor::new(&[n, o, oh, ow], out)
}

/// Gradients of `conv2d` with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    g: ConvGeometry,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = input.dims4("conv2d_backward")?;
    let (o, _, _, _) = weights.dims4("conv2d_backward")?;
    let (_, _, oh, ow) = grad_out.dims4("conv2d_backward")?;
    let ckk = c * g.kernel * g.kernel;
    let mut dx = vec![0.0; input.numel()];
    let mut dw = vec![0.0; weights.numel()];
    let mut db = vec![0.0; o];
    let mut dcols = vec![0.0; ckk * oh * ow];
    for b in 0..n {
        let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        let dy = &grad_out.data()[b * o * oh * ow..(b + 1) * o * oh * ow];
        for (oc, row) in dy.chunks(oh * ow).enumerate() {
            db[oc] += row.iter().sum::<f64>();
        }
        let cols = im2col(x, c, h, w, g, oh, ow);
        gemm(o, oh * ow, ckk, dy, false, &cols, true, 1.0, &mut dw);
        gemm(
            ckk,
            o,
            oh * ow,
            weights.data(),
            true,
            dy,
            false,
            0.0,
            &mut dcols,
        );
        col2im(
            &dcols,
            c,
            h,
            w,
            g,
            oh,
            ow,
            &mut dx[b * c * h * w..(b + 1) * c * h * w],
        );
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(weights.shape(), dw)?,
        Tensor::new(&[o], db)?,
    ))
}

/// Output shape of `conv_transpose2d`, validating every dimension.
pub fn conv_transpose2d_shape(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: ConvGeometry,
) -> Result<[usize; 4]> {
    g.validate("conv_transpose2d")?;
    let (n, c, h, w) = input.dims4("conv_transpose2d")?;
    let (wc, o, kh, kw) = weights.dims4("conv_transpose2d")?;
    if kh != g.kernel || kw != g.kernel {
        return Err(Error::shape(
            "conv_transpose2d",
            format!(
                "kernel dims {kh}x{kw} differ from declared kernel {}",
                g.kernel
            ),
        ));
    }
    if wc != c {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("in-channels: input has {c}, weights expect {wc}"),
        ));
    }
    check_bias("conv_transpose2d", bias, o)?;
    let oh = g.conv_transpose_out(h).ok_or_else(|| {
        Error::shape(
            "conv_transpose2d",
            format!("height {h} yields empty output"),
        )
    })?;
    let ow = g.conv_transpose_out(w).ok_or_else(|| {
        Error::shape("conv_transpose2d", format!("width {w} yields empty output"))
    })?;
    Ok([n, o, oh, ow])
}

/// Transposed convolution of `input (N×Ci×H×W)` with `weights (Ci×Co×k×k)`,
/// the adjoint of [`conv2d`] under the same geometry.
pub fn conv_transpose2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: ConvGeometry,
) -> Result<Tensor> {
    let [n, o, oh, ow] = conv_transpose2d_shape(input, weights, bias, g)?;
    let (_, c, h, w) = input.dims4("conv_transpose2d")?;
    let okk = o * g.kernel * g.kernel;
    let mut out = vec![0.0; n * o * oh * ow];
    let mut cols = vec![0.0; okk * h * w];
    for b in 0..n {
        let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        gemm(
            okk,
            c,
            h * w,
            weights.data(),
            true,
            x,
            false,
            0.0,
            &mut cols,
        );
        let y = &mut out[b * o * oh * ow..(b + 1) * o * oh * ow];
        col2im(&cols, o, oh, ow, g, h, w, y);
        for (oc, row) in y.chunks_mut(oh * ow).enumerate() {
            let bv = bias.data()[oc];
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(&[n, o, oh, ow], out)
}

/// Gradients of `conv_transpose2d` with respect to input, weights and bias.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    g: ConvGeometry,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = input.dims4("conv_transpose2d_backward")?;
    let (_, o, _, _) = weights.dims4("conv_transpose2d_backward")?;
    let (_, _, oh, ow) = grad_out.dims4("conv_transpose2d_backward")?;
    let okk = o * g.kernel * g.kernel;
    let mut dx = vec![0.0; input.numel()];
    let mut dw = vec![0.0; weights.numel()];
    let mut db = vec![0.0; o];
    for b in 0..n {
        let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        let dy = &grad_out.data()[b * o * oh * ow..(b + 1) * o * oh * ow];
        for (oc, row) in dy.chunks(oh * ow).enumerate() {
            db[oc] += row.iter().sum::<f64>();
        }
        let dcols = im2col(dy, o, oh, ow, g, h, w);
        gemm(
            c,
            okk,
            h * w,
            weights.data(),
            false,
            &dcols,
            false,
            0.0,
            &mut dx[b * c * h * w..(b + 1) * c * h * w],
        );
        gemm(c, h * w, okk, x, false, &dcols, true, 1.0, &mut dw);
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(weights.shape(), dw)?,
        Tensor::new(&[o], db)?,
    ))
}
