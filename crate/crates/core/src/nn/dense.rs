use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::gemm::gemm;
use crate::error::{Error, Result};

/// Fully-connected layer `y = f(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs], activation }
    }

    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs, activation);
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activation of unit `r` for one sample.
    #[inline]
    pub(crate) fn unit_preactivation(&self, input: &[f64], r: usize) -> f64 {
        let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
        self.bias[r] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
    }

    /// `input` is `batch × inputs`, returns `batch × outputs`.
    pub(crate) fn forward_batch(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.outputs];
        for row in out.chunks_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        gemm(batch, self.inputs, self.outputs, input, false, &self.weights, true, &mut out, 1.0);
        self.activation.apply_slice(&mut out);
        out
    }

    /// See [`super::conv::ConvLayer::backward_batch`] for the contract.
    #[allow(clippy::type_complexity)]
    pub(crate) fn backward_batch(
        &self,
        input: &[f64],
        output: &[f64],
        grad_out: &mut [f64],
        batch: usize,
        want_input_grad: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        self.activation.backprop_slice(output, grad_out);
        let mut bias_grad = vec![0.0; self.outputs];
        for row in grad_out.chunks(self.outputs) {
            bias_grad.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut weight_grad = vec![0.0; self.outputs * self.inputs];
        gemm(self.outputs, batch, self.inputs, grad_out, true, input, false, &mut weight_grad, 0.0);
        let input_grad = want_input_grad.then(|| {
            let mut g = vec![0.0; batch * self.inputs];
            gemm(batch, self.outputs, self.inputs, grad_out, false, &self.weights, false, &mut g, 0.0);
            g
        });
        (weight_grad, bias_grad, input_grad)
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Single-instance affine map plus activation.
pub fn dense_forward(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    check_len("dense input", input.len(), layer.inputs)?;
    Ok((0..layer.outputs).map(|r| layer.activation.apply(layer.unit_preactivation(input, r))).collect())
}

/// Exact gradients of [`dense_forward`].
#[allow(clippy::needless_range_loop)]
pub fn dense_backward(input: &[f64], layer: &DenseLayer, upstream: &[f64]) -> Result<DenseGrads> {
    check_len("dense input", input.len(), layer.inputs)?;
    check_len("upstream gradient", upstream.len(), layer.outputs)?;
    let mut grads = DenseGrads {
        input: vec![0.0; layer.inputs],
        weights: vec![0.0; layer.weights.len()],
        bias: vec![0.0; layer.outputs],
    };
    for r in 0..layer.outputs {
        let out = layer.activation.apply(layer.unit_preactivation(input, r));
        let dz = upstream[r] * layer.activation.grad_from_output(out);
        grads.bias[r] = dz;
        for c in 0..layer.inputs {
            grads.weights[r * layer.inputs + c] = dz * input[c];
            grads.input[c] += dz * layer.weights[r * layer.inputs + c];
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut layer = DenseLayer::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&[0.5, -2.0, 7.0], &layer).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let mut layer = DenseLayer::zeros(2, 1, Activation::Identity);
        layer.weights = vec![1.0, 1.0];
        layer.bias = vec![0.5];
        assert_eq!(dense_forward(&[2.0, 3.0], &layer).unwrap(), vec![5.5]);
        let g = dense_backward(&[2.0, 3.0], &layer, &[2.0]).unwrap();
        assert_eq!(g.weights, vec![4.0, 6.0]);
        assert_eq!(g.bias, vec![2.0]);
        assert_eq!(g.input, vec![2.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let layer = DenseLayer::zeros(2, 1, Activation::Identity);
        assert!(dense_forward(&[1.0], &layer).is_err());
        assert!(dense_backward(&[1.0, 2.0], &layer, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn batched_path_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::glorot(6, 4, Activation::Relu, &mut rng);
        let batch = 3;
        let x: Vec<f64> = (0..batch * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..batch * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = layer.forward_batch(&x, batch);
        let mut g = up.clone();
        let (wg, bg, ig) = layer.backward_batch(&x, &y, &mut g, batch, true);
        let ig = ig.unwrap();
        let mut want_w = vec![0.0; wg.len()];
        let mut want_b = vec![0.0; bg.len()];
        for b in 0..batch {
            let xs = &x[b * 6..(b + 1) * 6];
            let direct = dense_forward(xs, &layer).unwrap();
            for (a, d) in y[b * 4..(b + 1) * 4].iter().zip(&direct) {
                assert!((a - d).abs() < 1e-12);
            }
            let dg = dense_backward(xs, &layer, &up[b * 4..(b + 1) * 4]).unwrap();
            want_w.iter_mut().zip(&dg.weights).for_each(|(a, v)| *a += v);
            want_b.iter_mut().zip(&dg.bias).for_each(|(a, v)| *a += v);
            for (a, d) in ig[b * 6..(b + 1) * 6].iter().zip(&dg.input) {
                assert!((a - d).abs() < 1e-12);
            }
        }
        for (a, d) in wg.iter().zip(&want_w).chain(bg.iter().zip(&want_b)) {
            assert!((a - d).abs() < 1e-12);
        }
    }
}
