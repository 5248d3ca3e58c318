//! RMSprop: `E <- rho E + (1 - rho) g^2`, `theta <- theta - lr g / sqrt(E + eps)`.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self { learning_rate: 0.005, decay: 0.9, epsilon: 1e-8 }
    }
}

/// Element-wise update of one parameter array and its mean-square accumulator.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], mean_square: &mut [f64], cfg: &RmspropConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != mean_square.len() {
        return Err(Error::Dimension(format!(
            "rmsprop: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            mean_square.len()
        )));
    }
    let rho = cfg.decay;
    for ((p, &g), e) in params.iter_mut().zip(grads).zip(mean_square.iter_mut()) {
        *e = rho * *e + (1.0 - rho) * g * g;
        *p -= cfg.learning_rate * g / (*e + cfg.epsilon).sqrt();
    }
    Ok(())
}

/// Running mean-square accumulators mirroring a network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspropState {
    pub config: RmspropConfig,
    pub mean_square: Gradients,
}

impl RmspropState {
    pub fn new(net: &Network, config: RmspropConfig) -> Self {
        Self { config, mean_square: net.zero_grads() }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[ParamSet]) -> Result<()> {
        if grads.len() != net.layers().len() {
            return Err(Error::Dimension("gradient layer count differs from network".into()));
        }
        for ((layer, g), acc) in net.layers_mut().iter_mut().zip(grads).zip(&mut self.mean_square) {
            let (w, b) = layer.params_mut();
            rmsprop_step(w, &g.weights, &mut acc.weights, &self.config)?;
            rmsprop_step(b, &g.bias, &mut acc.bias, &self.config)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_accumulator() {
        let cfg = RmspropConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut e = vec![0.5, 0.2];
        rmsprop_step(&mut p, &[0.0, 0.0], &mut e, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(e, vec![0.9 * 0.5, 0.9 * 0.2]);
    }

    #[test]
    fn first_step_from_fresh_state() {
        let cfg = RmspropConfig::default();
        let mut p = vec![0.0];
        let mut e = vec![0.0];
        rmsprop_step(&mut p, &[1.0], &mut e, &cfg).unwrap();
        assert!((e[0] - 0.1).abs() < 1e-15);
        let want = -0.005 / (0.1f64 + 1e-8).sqrt();
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_shrinks_step() {
        let cfg = RmspropConfig::default();
        let mut p = vec![0.0];
        let mut e = vec![0.0];
        rmsprop_step(&mut p, &[1.0], &mut e, &cfg).unwrap();
        let first = -p[0];
        let before = p[0];
        rmsprop_step(&mut p, &[1.0], &mut e, &cfg).unwrap();
        let second = before - p[0];
        assert!(second < first);
        assert!(e[0] > 0.1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut e = vec![0.0; 2];
        assert!(rmsprop_step(&mut p, &[1.0], &mut e, &RmspropConfig::default()).is_err());
    }
}
