//! Central-difference check of backpropagated gradients.
//!
//! Perturbing one parameter of layer `l` only changes one output channel (or
//! unit) of that layer, so each probe recomputes that slice and then pushes
//! all probes of a chunk through the remaining layers as one batch.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::network::{Gradients, Layer, Network};
use crate::error::{Error, Result};

/// Probes per batched tail evaluation (each probe is evaluated at `+h` and `-h`).
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub l2_lambda: f64,
    /// Check at most this many randomly chosen parameters per layer.
    pub max_params_per_layer: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, l2_lambda: 0.0, max_params_per_layer: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Probes skipped because a ReLU switched between `+h` and `-h`.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub worst: Option<ParamCheck>,
    pub failures: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Gradient of `1/2 (pred - target)^2 + 1/2 lambda ||W||^2` for one instance.
pub fn analytic_gradients(net: &Network, input: &[f64], target: f64, l2_lambda: f64) -> Result<Gradients> {
    let cache = net.forward_batch(input, 1)?;
    let pred = cache.predictions()[0];
    let mut grads = net.backward(&cache, &[pred - target])?;
    for (g, layer) in grads.iter_mut().zip(net.layers()) {
        for (gw, w) in g.weights.iter_mut().zip(layer.weights()) {
            *gw += l2_lambda * w;
        }
    }
    Ok(grads)
}

/// Backpropagates and compares against finite differences.
pub fn gradient_check(net: &Network, input: &[f64], target: f64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let grads = analytic_gradients(net, input, target, opts.l2_lambda)?;
    check_gradients(net, input, target, &grads, opts)
}

struct Probe {
    kind: ParamKind,
    index: usize,
    /// Output channel or unit the parameter feeds.
    unit: usize,
}

/// Compares `analytic` against finite differences of the single-instance loss.
pub fn check_gradients(
    net: &Network,
    input: &[f64],
    target: f64,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) || !(opts.tolerance > 0.0) {
        return Err(Error::Config("step and tolerance must be positive".into()));
    }
    if analytic.len() != net.layers().len()
        || analytic
            .iter()
            .zip(net.layers())
            .any(|(g, l)| g.weights.len() != l.weights().len() || g.bias.len() != l.bias().len())
    {
        return Err(Error::Dimension("gradient shapes do not match the network".into()));
    }
    let base = net.forward_batch(input, 1)?;
    let shapes = net.layer_shapes()?;
    let h = opts.step;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        checked: 0,
        kinks_skipped: 0,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance: opts.tolerance,
    };

    for (l, layer) in net.layers().iter().enumerate() {
        let nw = layer.weights().len();
        let total = layer.param_count();
        let mut chosen: Vec<usize> = match opts.max_params_per_layer {
            Some(k) if k < total => sample(&mut rng, total, k).into_vec(),
            _ => (0..total).collect(),
        };
        chosen.sort_unstable();
        let per_unit = match layer {
            Layer::Conv(c) => c.in_channels * c.kernel_h * c.kernel_w,
            Layer::Dense(d) => d.inputs,
        };
        let probes: Vec<Probe> = chosen
            .into_iter()
            .map(|i| {
                if i < nw {
                    Probe { kind: ParamKind::Weight, index: i, unit: i / per_unit }
                } else {
                    Probe { kind: ParamKind::Bias, index: i - nw, unit: i - nw }
                }
            })
            .collect();

        let out_shape = shapes[l];
        let (channels, plane) = match layer {
            Layer::Conv(_) => (out_shape.channels, out_shape.height * out_shape.width),
            Layer::Dense(_) => (1, out_shape.len()),
        };
        let base_out = base.layer_output(l);
        let layer_in = base.layer_input(l);
        let in_shape = if l == 0 { net.input_shape() } else { shapes[l - 1] };

        let mut probe_layer = layer.clone();
        for chunk in probes.chunks(CHUNK) {
            let batch = 2 * chunk.len();
            // layer-l outputs for every probe, in the layout the next layer reads
            let mut buf = vec![0.0; channels * batch * plane];
            for c in 0..channels {
                for s in 0..batch {
                    buf[(c * batch + s) * plane..][..plane].copy_from_slice(&base_out[c * plane..][..plane]);
                }
            }
            let mut scratch = vec![0.0; plane];
            for (k, probe) in chunk.iter().enumerate() {
                for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let s = 2 * k + j;
                    let (w, b) = probe_layer.params_mut();
                    let slot = match probe.kind {
                        ParamKind::Weight => &mut w[probe.index],
                        ParamKind::Bias => &mut b[probe.index],
                    };
                    let orig = *slot;
                    *slot = orig + sign * h;
                    match &probe_layer {
                        Layer::Conv(c) => {
                            c.channel_preactivation(
                                layer_in,
                                in_shape.height,
                                in_shape.width,
                                probe.unit,
                                &mut scratch,
                            );
                            c.activation.apply_slice(&mut scratch);
                            buf[(probe.unit * batch + s) * plane..][..plane].copy_from_slice(&scratch);
                        }
                        Layer::Dense(d) => {
                            buf[s * plane + probe.unit] =
                                d.activation.apply(d.unit_preactivation(layer_in, probe.unit));
                        }
                    }
                    let (w, b) = probe_layer.params_mut();
                    match probe.kind {
                        ParamKind::Weight => w[probe.index] = orig,
                        ParamKind::Bias => b[probe.index] = orig,
                    }
                }
            }

            // per-sample ReLU masks of layer l and everything after it
            let mut masks: Vec<(Activation, usize, usize, Vec<f64>)> =
                vec![(activation_of(layer), channels, plane, buf.clone())];
            let preds: Vec<f64> = if l + 1 == net.layers().len() {
                buf.clone()
            } else {
                let tail = net.forward_from(l + 1, buf, batch);
                for (t, (later, sh)) in net.layers().iter().zip(&shapes).enumerate().skip(l + 1) {
                    let (tc, tp) = match later {
                        Layer::Conv(_) => (sh.channels, sh.height * sh.width),
                        Layer::Dense(_) => (1, sh.len()),
                    };
                    masks.push((activation_of(later), tc, tp, tail.layer_output(t).to_vec()));
                }
                tail.predictions().to_vec()
            };

            for (k, probe) in chunk.iter().enumerate() {
                let (sp, sm) = (2 * k, 2 * k + 1);
                let kink = masks.iter().any(|(act, c, p, out)| {
                    *act == Activation::Relu && relu_pattern_differs(out, *c, batch, *p, sp, sm)
                });
                if kink {
                    report.kinks_skipped += 1;
                    continue;
                }
                // terms constant in this parameter cancel in the difference,
                // so they are left out to avoid rounding against a large sum
                let reg_diff = match probe.kind {
                    ParamKind::Weight => {
                        let w0 = layer.weights()[probe.index];
                        0.5 * opts.l2_lambda * ((w0 + h) * (w0 + h) - (w0 - h) * (w0 - h))
                    }
                    ParamKind::Bias => 0.0,
                };
                let (pp, pm) = (preds[sp], preds[sm]);
                let data_diff = 0.5 * (pp - pm) * (pp + pm - 2.0 * target);
                let numeric = (data_diff + reg_diff) / (2.0 * h);
                let a = match probe.kind {
                    ParamKind::Weight => analytic[l].weights[probe.index],
                    ParamKind::Bias => analytic[l].bias[probe.index],
                };
                let rel = relative_error(a, numeric);
                let check =
                    ParamCheck { layer: l, kind: probe.kind, index: probe.index, analytic: a, numeric, rel_error: rel };
                report.checked += 1;
                if rel > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(rel);
                    report.worst = Some(check);
                }
                if !(rel <= opts.tolerance) {
                    report.failures.push(check);
                }
            }
        }
    }
    Ok(report)
}

fn activation_of(layer: &Layer) -> Activation {
    match layer {
        Layer::Conv(c) => c.activation,
        Layer::Dense(d) => d.activation,
    }
}

/// `out` is `(C, B, P)`; compares the positivity pattern of samples `a` and `b`.
fn relu_pattern_differs(out: &[f64], channels: usize, batch: usize, plane: usize, a: usize, b: usize) -> bool {
    (0..channels).any(|c| {
        let xa = &out[(c * batch + a) * plane..][..plane];
        let xb = &out[(c * batch + b) * plane..][..plane];
        xa.iter().zip(xb).any(|(p, q)| (*p > 0.0) != (*q > 0.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvLayer, DenseLayer, Shape3};
    use rand::Rng;

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
    fn linear_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net =
            Network::new(Shape3::flat(3), vec![Layer::Dense(DenseLayer::glorot(3, 1, Activation::Identity, &mut rng))])
                .unwrap();
        let opts = GradCheckOptions { l2_lambda: 0.01, ..Default::default() };
        let r = gradient_check(&net, &[0.3, -0.2, 0.9], 0.4, &opts).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn small_network_passes_and_corrupted_gradients_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = small_net(&mut rng);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let opts = GradCheckOptions { l2_lambda: 0.001, ..Default::default() };
        let r = gradient_check(&net, &x, 0.7, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked + r.kinks_skipped, net.param_count());

        let mut bad = analytic_gradients(&net, &x, 0.7, opts.l2_lambda).unwrap();
        for g in &mut bad {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= 2.0);
        }
        let r = check_gradients(&net, &x, 0.7, &bad, &opts).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn sampling_limits_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = small_net(&mut rng);
        let x = vec![0.5; 20];
        let opts = GradCheckOptions { max_params_per_layer: Some(3), ..Default::default() };
        let r = gradient_check(&net, &x, 0.0, &opts).unwrap();
        assert!(r.checked + r.kinks_skipped <= 12);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
