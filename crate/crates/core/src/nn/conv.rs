//! Valid (unpadded), stride-1 2D convolution.
//!
//! [`conv_forward`] / [`conv_backward`] are direct per-instance loops. The
//! network uses the batched im2col + GEMM path in [`ConvLayer::forward_batch`]
//! and [`ConvLayer::backward_batch`]; tests pin the two against each other.
//!
//! Batched activations use a `(channels, batch, height, width)` layout so the
//! GEMM output of one layer is directly the input of the next.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::gemm::gemm;
use super::tensor::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor3,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel_h, kernel_w, activation);
        let area = (kernel_h * kernel_w) as f64;
        let limit = (6.0 / (in_channels as f64 * area + out_channels as f64 * area)).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height < self.kernel_h || width < self.kernel_w {
            return Err(Error::Dimension(format!(
                "{height}x{width} input is smaller than the {}x{} kernel",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((height - self.kernel_h + 1, width - self.kernel_w + 1))
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Pre-activation of output channel `o` for one `(C, H, W)` sample.
    pub(crate) fn channel_preactivation(&self, input: &[f64], height: usize, width: usize, o: usize, out: &mut [f64]) {
        let (oh, ow) = (height - self.kernel_h + 1, width - self.kernel_w + 1);
        out[..oh * ow].fill(self.bias[o]);
        for i in 0..self.in_channels {
            let plane = &input[i * height * width..(i + 1) * height * width];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let w = self.w(o, i, ky, kx);
                    for y in 0..oh {
                        let src = &plane[(y + ky) * width + kx..(y + ky) * width + kx + ow];
                        for (dst, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                            *dst += w * s;
                        }
                    }
                }
            }
        }
    }

    /// Batched forward. `input` is `(in_channels, batch, height, width)`;
    /// returns the activated output in `(out_channels, batch, oh, ow)`.
    pub(crate) fn forward_batch(&self, input: &[f64], batch: usize, height: usize, width: usize) -> Vec<f64> {
        let (oh, ow) = (height - self.kernel_h + 1, width - self.kernel_w + 1);
        let cols_n = batch * oh * ow;
        let cols = self.im2col(input, batch, height, width);
        let mut out = vec![0.0; self.out_channels * cols_n];
        for (o, row) in out.chunks_mut(cols_n).enumerate() {
            row.fill(self.bias[o]);
        }
        gemm(self.out_channels, self.patch_len(), cols_n, &self.weights, false, &cols, false, &mut out, 1.0);
        self.activation.apply_slice(&mut out);
        out
    }

    /// Batched backward. `output` is what [`Self::forward_batch`] returned and
    /// `grad_out` the upstream gradient in the same layout (overwritten with
    /// the pre-activation gradient). Returns (weight grad, bias grad, input
    /// grad when requested).
    #[allow(clippy::type_complexity, clippy::too_many_arguments)]
    pub(crate) fn backward_batch(
        &self,
        input: &[f64],
        output: &[f64],
        grad_out: &mut [f64],
        batch: usize,
        height: usize,
        width: usize,
        want_input_grad: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let (oh, ow) = (height - self.kernel_h + 1, width - self.kernel_w + 1);
        let cols_n = batch * oh * ow;
        let k = self.patch_len();
        self.activation.backprop_slice(output, grad_out);

        let bias_grad: Vec<f64> = grad_out.chunks(cols_n).map(|r| r.iter().sum()).collect();
        let cols = self.im2col(input, batch, height, width);
        let mut weight_grad = vec![0.0; self.out_channels * k];
        gemm(self.out_channels, cols_n, k, grad_out, false, &cols, true, &mut weight_grad, 0.0);

        let input_grad = want_input_grad.then(|| {
            let mut dcols = cols;
            gemm(k, self.out_channels, cols_n, &self.weights, true, grad_out, false, &mut dcols, 0.0);
            self.col2im(&dcols, batch, height, width)
        });
        (weight_grad, bias_grad, input_grad)
    }

    fn im2col(&self, input: &[f64], batch: usize, height: usize, width: usize) -> Vec<f64> {
        let (oh, ow) = (height - self.kernel_h + 1, width - self.kernel_w + 1);
        let cols_n = batch * oh * ow;
        let mut cols = vec![0.0; self.patch_len() * cols_n];
        let mut r = 0;
        for ci in 0..self.in_channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = &mut cols[r * cols_n..(r + 1) * cols_n];
                    for b in 0..batch {
                        let plane = &input[(ci * batch + b) * height * width..][..height * width];
                        for y in 0..oh {
                            let src = &plane[(y + ky) * width + kx..][..ow];
                            row[(b * oh + y) * ow..][..ow].copy_from_slice(src);
                        }
                    }
                    r += 1;
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], batch: usize, height: usize, width: usize) -> Vec<f64> {
        let (oh, ow) = (height - self.kernel_h + 1, width - self.kernel_w + 1);
        let cols_n = batch * oh * ow;
        let mut grad = vec![0.0; self.in_channels * batch * height * width];
        let mut r = 0;
        for ci in 0..self.in_channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = &dcols[r * cols_n..(r + 1) * cols_n];
                    for b in 0..batch {
                        let plane = &mut grad[(ci * batch + b) * height * width..][..height * width];
                        for y in 0..oh {
                            let dst = &mut plane[(y + ky) * width + kx..][..ow];
                            for (d, s) in dst.iter_mut().zip(&row[(b * oh + y) * ow..][..ow]) {
                                *d += s;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        grad
    }
}

fn check_input(input: &Tensor3, layer: &ConvLayer) -> Result<(usize, usize)> {
    if input.channels != layer.in_channels {
        return Err(Error::Dimension(format!(
            "input has {} channels, layer expects {}",
            input.channels, layer.in_channels
        )));
    }
    layer.output_hw(input.height, input.width)
}

fn preactivation(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    let (oh, ow) = check_input(input, layer)?;
    let mut z = Tensor3::zeros(layer.out_channels, oh, ow);
    for o in 0..layer.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_channels {
                    for ky in 0..layer.kernel_h {
                        for kx in 0..layer.kernel_w {
                            acc += layer.w(o, i, ky, kx) * input.at(i, y + ky, x + kx);
                        }
                    }
                }
                *z.at_mut(o, y, x) = acc;
            }
        }
    }
    Ok(z)
}

/// Single-instance valid convolution followed by the layer activation.
pub fn conv_forward(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    let mut out = preactivation(input, layer)?;
    for v in &mut out.data {
        *v = layer.activation.apply(*v);
    }
    Ok(out)
}

/// Exact gradients of [`conv_forward`] given the upstream gradient.
pub fn conv_backward(input: &Tensor3, layer: &ConvLayer, upstream: &Tensor3) -> Result<ConvGrads> {
    let z = preactivation(input, layer)?;
    if upstream.shape() != z.shape() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            z.shape()
        )));
    }
    let (_, oh, ow) = z.shape();
    let mut grads = ConvGrads {
        input: Tensor3::zeros(input.channels, input.height, input.width),
        weights: vec![0.0; layer.weights.len()],
        bias: vec![0.0; layer.bias.len()],
    };
    for o in 0..layer.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let out = layer.activation.apply(z.at(o, y, x));
                let dz = upstream.at(o, y, x) * layer.activation.grad_from_output(out);
                if dz == 0.0 {
                    continue;
                }
                grads.bias[o] += dz;
                for i in 0..layer.in_channels {
                    for ky in 0..layer.kernel_h {
                        for kx in 0..layer.kernel_w {
                            let widx = ((o * layer.in_channels + i) * layer.kernel_h + ky) * layer.kernel_w + kx;
                            grads.weights[widx] += dz * input.at(i, y + ky, x + kx);
                            *grads.input.at_mut(i, y + ky, x + kx) += dz * layer.weights[widx];
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}
