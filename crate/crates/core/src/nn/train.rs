//! Minibatch training loop shared by the convolutional model and the MLP
//! baselines: shuffled batches, batch-mean squared error plus L2 weight
//! penalty, RMSprop updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optim::{RmspropConfig, RmspropState};
use crate::error::{Error, Result};

/// Stream offset separating the shuffle generator from initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

/// Flat feature rows plus scalar targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub feature_len: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_len: usize) -> Self {
        Self { feature_len, ..Default::default() }
    }

    pub fn push(&mut self, features: &[f64], target: f64) -> Result<()> {
        if features.len() != self.feature_len {
            return Err(Error::Dimension(format!(
                "instance has {} features, dataset expects {}",
                features.len(),
                self.feature_len
            )));
        }
        self.features.extend_from_slice(features);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn features_of(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }
}

/// Arithmetic precision used for stored parameters during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("unknown precision {other:?} (f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub rmsprop: RmspropConfig,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            l2_lambda: 0.001,
            rmsprop: RmspropConfig::default(),
            seed: 0,
            precision: Precision::F64,
        }
    }
}

/// Batch-mean `1/2 (pred - target)^2` plus `1/2 lambda ||W||^2`.
pub fn compute_loss(predictions: &[f64], targets: &[f64], weight_norm_sq: f64, lambda: f64) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    let data: f64 = predictions.iter().zip(targets).map(|(p, t)| 0.5 * (p - t) * (p - t)).sum();
    Ok(data / predictions.len() as f64 + 0.5 * lambda * weight_norm_sq)
}

/// Mean squared error of `net` over `data`.
pub fn mean_squared_error(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let preds = net.predict_batch(&data.features)?;
    Ok(preds.iter().zip(&data.targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

fn round_to_f32(net: &mut Network) {
    for layer in net.layers_mut() {
        let (w, b) = layer.params_mut();
        for v in w.iter_mut().chain(b.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

/// Trains `net` in place for `opts.epochs` epochs. Each epoch visits every
/// instance once in a seed-determined random order. `on_epoch` receives the
/// epoch index, the network and the mean minibatch objective of that epoch.
pub fn fit_network(
    net: &mut Network,
    data: &Dataset,
    opts: &FitOptions,
    mut on_epoch: impl FnMut(usize, &Network, f64) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if data.feature_len != net.input_shape().len() {
        return Err(Error::Dimension(format!(
            "features of length {} for a network expecting {}",
            data.feature_len,
            net.input_shape().len()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if opts.precision == Precision::F32 {
        round_to_f32(net);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ SHUFFLE_STREAM);
    let mut state = RmspropState::new(net, opts.rmsprop);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut batch_x = Vec::with_capacity(opts.batch_size * data.feature_len);
    let mut batch_y = Vec::with_capacity(opts.batch_size);

    for epoch in 0..opts.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(opts.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in idx {
                batch_x.extend_from_slice(data.features_of(i));
                batch_y.push(data.targets[i]);
            }
            let cache = net.forward_batch(&batch_x, idx.len())?;
            let preds = cache.predictions();
            let loss = compute_loss(preds, &batch_y, net.weight_norm_sq(), opts.l2_lambda)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, batch {bi}")));
            }
            let scale = 1.0 / idx.len() as f64;
            let pred_grad: Vec<f64> = preds.iter().zip(&batch_y).map(|(p, t)| (p - t) * scale).collect();
            let mut grads = net.backward(&cache, &pred_grad)?;
            if opts.l2_lambda != 0.0 {
                for (g, layer) in grads.iter_mut().zip(net.layers()) {
                    for (gw, w) in g.weights.iter_mut().zip(layer.weights()) {
                        *gw += opts.l2_lambda * w;
                    }
                }
            }
            state.step(net, &grads)?;
            if opts.precision == Precision::F32 {
                round_to_f32(net);
            }
            loss_sum += loss;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        epoch_losses.push(epoch_loss);
        on_epoch(epoch, net, epoch_loss)?;
    }
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(compute_loss(&[1.0, 2.0], &[1.0, 2.0], 5.0, 0.0).unwrap(), 0.0);
        assert_eq!(compute_loss(&[1.5], &[1.0], 0.0, 0.0).unwrap(), 0.125);
        assert_eq!(compute_loss(&[1.0], &[1.0], 4.0, 0.5).unwrap(), 1.0);
        assert!(compute_loss(&[1.0], &[], 0.0, 0.0).is_err());
    }

    #[test]
    fn precision_parses() {
        assert_eq!("f32".parse::<Precision>().unwrap(), Precision::F32);
        assert!("f16".parse::<Precision>().is_err());
    }
}
