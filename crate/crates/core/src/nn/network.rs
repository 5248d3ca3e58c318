//! Layer stack (convolutions, then fully-connected layers) with batched
//! forward/backward passes and a scalar output.

use serde::{Deserialize, Serialize};

use super::conv::{conv_forward, ConvLayer};
use super::dense::{dense_forward, DenseLayer};
use super::tensor::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Conv(ConvLayer),
    Dense(DenseLayer),
}

impl Layer {
    pub fn weights(&self) -> &[f64] {
        match self {
            Self::Conv(c) => &c.weights,
            Self::Dense(d) => &d.weights,
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Self::Conv(c) => &c.bias,
            Self::Dense(d) => &d.bias,
        }
    }

    pub fn params_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        match self {
            Self::Conv(c) => (&mut c.weights, &mut c.bias),
            Self::Dense(d) => (&mut d.weights, &mut d.bias),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights().len() + self.bias().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Self { channels: 1, height: 1, width: len }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weight and bias arrays for one layer; used for gradients and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub type Gradients = Vec<ParamSet>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input: Shape3,
    layers: Vec<Layer>,
}

/// Activations retained by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    /// `inputs[l]` is the input of layer `l` in the layout that layer reads.
    inputs: Vec<Vec<f64>>,
    /// `outputs[l]` is the activated output of layer `l`.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// One prediction per sample.
    pub fn predictions(&self) -> &[f64] {
        self.outputs.last().expect("network has layers")
    }

    pub(crate) fn layer_output(&self, l: usize) -> &[f64] {
        &self.outputs[l]
    }

    pub(crate) fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l]
    }
}

/// `(C, B, P)` to `(B, C * P)`.
pub(crate) fn to_batch_major(x: &[f64], channels: usize, batch: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            out[(b * channels + c) * plane..][..plane].copy_from_slice(&x[(c * batch + b) * plane..][..plane]);
        }
    }
    out
}

/// `(B, C * P)` to `(C, B, P)`.
pub(crate) fn to_channel_major(x: &[f64], channels: usize, batch: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            out[(c * batch + b) * plane..][..plane].copy_from_slice(&x[(b * channels + c) * plane..][..plane]);
        }
    }
    out
}

impl Network {
    /// Validates that convolutions precede dense layers, shapes chain, and the
    /// stack ends in a single-output dense layer.
    pub fn new(input: Shape3, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input, layers };
        net.layer_shapes()?;
        match net.layers.last() {
            Some(Layer::Dense(d)) if d.outputs == 1 => Ok(net),
            _ => Err(Error::Config("network must end in a dense layer with one output".into())),
        }
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights()).map(|w| w * w).sum()
    }

    /// Output shape of each layer.
    pub fn layer_shapes(&self) -> Result<Vec<Shape3>> {
        let mut shape = self.input;
        let mut seen_dense = false;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv(c) => {
                    if seen_dense {
                        return Err(Error::Config(format!("conv layer {i} follows a dense layer")));
                    }
                    if c.in_channels != shape.channels {
                        return Err(Error::Dimension(format!(
                            "layer {i} expects {} channels, gets {}",
                            c.in_channels, shape.channels
                        )));
                    }
                    let (h, w) = c.output_hw(shape.height, shape.width)?;
                    Shape3::new(c.out_channels, h, w)
                }
                Layer::Dense(d) => {
                    seen_dense = true;
                    if d.inputs != shape.len() {
                        return Err(Error::Dimension(format!(
                            "layer {i} expects {} inputs, gets {}",
                            d.inputs,
                            shape.len()
                        )));
                    }
                    Shape3::flat(d.outputs)
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    fn input_shape_of(&self, l: usize, shapes: &[Shape3]) -> Shape3 {
        if l == 0 {
            self.input
        } else {
            shapes[l - 1]
        }
    }

    /// Batched forward from batch-major inputs (`batch × input_len`).
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        let len = self.input.len();
        if inputs.len() != batch * len {
            return Err(Error::Dimension(format!("{} input values for a batch of {batch} × {len}", inputs.len())));
        }
        let first = match self.layers[0] {
            Layer::Conv(_) => {
                to_channel_major(inputs, self.input.channels, batch, self.input.height * self.input.width)
            }
            Layer::Dense(_) => inputs.to_vec(),
        };
        Ok(self.forward_from(0, first, batch))
    }

    /// Runs layers `start..` on `input`, which must already be in the layout
    /// layer `start - 1` produces (`(C, B, H, W)` after a convolution,
    /// `batch × features` after a dense layer).
    pub(crate) fn forward_from(&self, start: usize, input: Vec<f64>, batch: usize) -> ForwardCache {
        let shapes = self.layer_shapes().expect("validated at construction");
        let mut inputs = Vec::with_capacity(self.layers.len() - start);
        let mut outputs = Vec::with_capacity(self.layers.len() - start);
        let mut x = input;
        for l in start..self.layers.len() {
            let in_shape = self.input_shape_of(l, &shapes);
            let prev_is_conv = l > 0 && matches!(self.layers[l - 1], Layer::Conv(_));
            let out = match &self.layers[l] {
                Layer::Conv(c) => {
                    let out = c.forward_batch(&x, batch, in_shape.height, in_shape.width);
                    inputs.push(std::mem::take(&mut x));
                    out
                }
                Layer::Dense(d) => {
                    let flat = if prev_is_conv {
                        to_batch_major(&x, in_shape.channels, batch, in_shape.height * in_shape.width)
                    } else {
                        std::mem::take(&mut x)
                    };
                    let out = d.forward_batch(&flat, batch);
                    inputs.push(flat);
                    out
                }
            };
            outputs.push(out.clone());
            x = out;
        }
        // pad so that indices line up with layer numbers
        let mut all_inputs = vec![Vec::new(); start];
        all_inputs.extend(inputs);
        let mut all_outputs = vec![Vec::new(); start];
        all_outputs.extend(outputs);
        ForwardCache { batch, inputs: all_inputs, outputs: all_outputs }
    }

    /// Gradients of `sum_b pred_grad[b] * prediction[b]` with respect to all
    /// parameters.
    pub fn backward(&self, cache: &ForwardCache, pred_grad: &[f64]) -> Result<Gradients> {
        let batch = cache.batch;
        if pred_grad.len() != batch {
            return Err(Error::Dimension(format!("{} output gradients for a batch of {batch}", pred_grad.len())));
        }
        let shapes = self.layer_shapes()?;
        let mut grads: Vec<ParamSet> = Vec::with_capacity(self.layers.len());
        let mut upstream = pred_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let in_shape = self.input_shape_of(l, &shapes);
            let want_input = l > 0;
            let (w, b, dx) = match &self.layers[l] {
                Layer::Conv(c) => c.backward_batch(
                    &cache.inputs[l],
                    &cache.outputs[l],
                    &mut upstream,
                    batch,
                    in_shape.height,
                    in_shape.width,
                    want_input,
                ),
                Layer::Dense(d) => {
                    let (w, b, dx) =
                        d.backward_batch(&cache.inputs[l], &cache.outputs[l], &mut upstream, batch, want_input);
                    let prev_is_conv = l > 0 && matches!(self.layers[l - 1], Layer::Conv(_));
                    let dx = dx.map(|g| {
                        if prev_is_conv {
                            to_channel_major(&g, in_shape.channels, batch, in_shape.height * in_shape.width)
                        } else {
                            g
                        }
                    });
                    (w, b, dx)
                }
            };
            grads.push(ParamSet { weights: w, bias: b });
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// Predictions for `batch × input_len` inputs, evaluated in chunks.
    pub fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let len = self.input.len();
        if !inputs.len().is_multiple_of(len) {
            return Err(Error::Dimension(format!("{} values is not a multiple of {len}", inputs.len())));
        }
        let mut out = Vec::with_capacity(inputs.len() / len);
        for chunk in inputs.chunks(256 * len) {
            out.extend_from_slice(self.forward_batch(chunk, chunk.len() / len)?.predictions());
        }
        Ok(out)
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward_batch(input, 1)?.predictions()[0])
    }

    /// Per-instance forward through the direct-loop layer functions.
    pub fn predict_reference(&self, input: &[f64]) -> Result<f64> {
        let mut t = Tensor3::new(self.input.channels, self.input.height, self.input.width, input.to_vec())?;
        let mut flat: Option<Vec<f64>> = None;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => t = conv_forward(&t, c)?,
                Layer::Dense(d) => {
                    let x = flat.take().unwrap_or_else(|| t.data.clone());
                    flat = Some(dense_forward(&x, d)?);
                }
            }
        }
        Ok(flat.expect("network ends in a dense layer")[0])
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| ParamSet { weights: vec![0.0; l.weights().len()], bias: vec![0.0; l.bias().len()] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(rng: &mut ChaCha8Rng) -> Network {
        Network::new(
            Shape3::new(1, 4, 5),
            vec![
                Layer::Conv(ConvLayer::glorot(1, 3, 2, 2, Activation::Relu, rng)),
                Layer::Conv(ConvLayer::glorot(3, 2, 2, 2, Activation::Relu, rng)),
                Layer::Dense(DenseLayer::glorot(12, 4, Activation::Relu, rng)),
                Layer::Dense(DenseLayer::glorot(4, 1, Activation::Identity, rng)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn batched_forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = small_net(&mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 20).map(|_| rng.random_range(0.0..1.0)).collect();
        let preds = net.predict_batch(&x).unwrap();
        for b in 0..batch {
            let r = net.predict_reference(&x[b * 20..(b + 1) * 20]).unwrap();
            assert!((preds[b] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad = Network::new(
            Shape3::new(1, 4, 5),
            vec![Layer::Dense(DenseLayer::glorot(19, 1, Activation::Identity, &mut rng))],
        );
        assert!(bad.is_err());
        let no_head = Network::new(
            Shape3::new(1, 4, 5),
            vec![Layer::Conv(ConvLayer::glorot(1, 1, 2, 2, Activation::Relu, &mut rng))],
        );
        assert!(no_head.is_err());
        let conv_after_dense = Network::new(
            Shape3::new(1, 4, 5),
            vec![
                Layer::Dense(DenseLayer::glorot(20, 20, Activation::Relu, &mut rng)),
                Layer::Conv(ConvLayer::glorot(1, 1, 2, 2, Activation::Relu, &mut rng)),
                Layer::Dense(DenseLayer::glorot(12, 1, Activation::Identity, &mut rng)),
            ],
        );
        assert!(conv_after_dense.is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = small_net(&mut rng);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let a = net.predict_batch(&x).unwrap();
        let b = net.predict_batch(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn layout_conversions_invert() {
        let x: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let bm = to_batch_major(&x, 2, 3, 4);
        assert_eq!(to_channel_major(&bm, 2, 3, 4), x);
        // sample 1 in batch-major form is channel 0 then channel 1 of that sample
        assert_eq!(&bm[8..16], &[4.0, 5.0, 6.0, 7.0, 16.0, 17.0, 18.0, 19.0]);
    }
}
