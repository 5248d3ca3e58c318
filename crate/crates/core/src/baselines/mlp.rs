use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fit_network, Activation, Dataset, DenseLayer, FitOptions, Layer, Network, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub fit: FitOptions,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::two_dimensional()
    }
}

impl MlpConfig {
    /// 8 hidden layers of 150 units, for flattened matrix input.
    pub fn two_dimensional() -> Self {
        Self { hidden_layers: 8, width: 150, fit: FitOptions::default() }
    }

    /// 5 hidden layers of 200 units, for vector input.
    pub fn one_dimensional() -> Self {
        Self { hidden_layers: 5, width: 200, fit: FitOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.width == 0 {
            return Err(Error::Config("MLP width must be positive".into()));
        }
        if self.fit.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// ReLU hidden layers and one identity output unit.
pub fn build_mlp(input_len: usize, cfg: &MlpConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    if input_len == 0 {
        return Err(Error::Config("MLP input length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(cfg.hidden_layers + 1);
    let mut width = input_len;
    for _ in 0..cfg.hidden_layers {
        layers.push(Layer::Dense(DenseLayer::glorot(width, cfg.width, Activation::Relu, &mut rng)));
        width = cfg.width;
    }
    layers.push(Layer::Dense(DenseLayer::glorot(width, 1, Activation::Identity, &mut rng)));
    Network::new(Shape3::flat(input_len), layers)
}

/// Builds and trains an MLP on `data` with the shared optimizer settings.
pub fn mlp_fit(data: &Dataset, cfg: &MlpConfig) -> Result<Network> {
    let mut net = build_mlp(data.feature_len, cfg, cfg.fit.seed)?;
    fit_network(&mut net, data, &cfg.fit, |_, _, _| Ok(()))?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::lr_fit;
    use crate::nn::gradient_check;
    use crate::nn::GradCheckOptions;
    use rand::Rng;

    #[test]
    fn default_shapes() {
        let net = build_mlp(120, &MlpConfig::two_dimensional(), 0).unwrap();
        assert_eq!(net.input_shape().len(), 120);
        assert_eq!(net.layers().len(), 9);
        let net = build_mlp(15, &MlpConfig::one_dimensional(), 0).unwrap();
        assert_eq!(net.layers().len(), 6);
    }

    #[test]
    fn gradients_check_out() {
        let cfg = MlpConfig { hidden_layers: 3, width: 12, ..Default::default() };
        let net = build_mlp(15, &cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = gradient_check(&net, &x, 0.3, &GradCheckOptions { l2_lambda: 0.001, ..Default::default() }).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn no_hidden_layers_matches_linear_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut data = Dataset::new(3);
        for _ in 0..256 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let y = 0.2 + 0.5 * x[0] - 0.3 * x[1] + 0.1 * x[2];
            data.push(&x, y).unwrap();
        }
        let fit = FitOptions { epochs: 400, batch_size: 32, l2_lambda: 0.0, ..Default::default() };
        let mut net = mlp_fit(&data, &MlpConfig { hidden_layers: 0, width: 0, fit }).unwrap();
        // constant-rate RMSprop jitters by about the learning rate; settle with a smaller one
        let mut fine = fit;
        fine.rmsprop.learning_rate = 1e-4;
        fit_network(&mut net, &data, &fine, |_, _, _| Ok(())).unwrap();
        let lr = lr_fit(&data.features, 3, &data.targets).unwrap();
        for i in 0..data.len() {
            let x = data.features_of(i);
            let d = (net.predict(x).unwrap() - lr.predict(x)).abs();
            assert!(d < 1e-3, "{d}");
        }
    }
}
