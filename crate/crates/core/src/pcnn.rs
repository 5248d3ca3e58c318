//! The folded-input convolutional forecaster: model assembly, training over
//! chronological splits, prediction and model files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::domain::Splits;
use crate::domain::{CongestionSeries, NormalizationParams};
use crate::error::{Error, Result};
use crate::eval::{metrics_from_pairs, ForecastRow, Metrics, DEFAULT_MRE_EPSILON};
use crate::folding::{build_multistep_matrix, eligible_positions, FoldingConfig, Origin};
use crate::nn::{
    fit_network, gradient_check, Activation, ConvLayer, Dataset, DenseLayer, FitOptions, GradCheckOptions,
    GradCheckReport, Layer, Network, Precision, RmspropConfig, Shape3,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One model per segment, or one shared model over all segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    PerSegment,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcnnConfig {
    pub folding: FoldingConfig,
    pub conv_layers: usize,
    pub filters: usize,
    pub last_filters: usize,
    pub kernel_size: usize,
    pub optimizer: RmspropConfig,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub mode: TrainMode,
    pub splits: Splits,
}

impl Default for PcnnConfig {
    fn default() -> Self {
        Self {
            folding: FoldingConfig::default(),
            conv_layers: 5,
            filters: 64,
            last_filters: 16,
            kernel_size: 2,
            optimizer: RmspropConfig::default(),
            l2_lambda: 0.001,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            precision: Precision::F64,
            mode: TrainMode::PerSegment,
            splits: Splits::default(),
        }
    }
}

impl PcnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.folding.validate()?;
        if self.conv_layers == 0 || self.filters == 0 || self.last_filters == 0 || self.kernel_size == 0 {
            return Err(Error::Config("layer counts, filters and kernel size must be positive".into()));
        }
        let shrink = self.conv_layers * (self.kernel_size - 1);
        let (h, w) = (self.folding.rows(), self.folding.cols());
        if shrink >= h.min(w) {
            return Err(Error::Config(format!(
                "{} conv layers of size {k}x{k} do not fit a {h}x{w} input",
                self.conv_layers,
                k = self.kernel_size
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("learning rate must be positive and l2_lambda non-negative".into()));
        }
        Ok(())
    }

    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2_lambda: self.l2_lambda,
            rmsprop: self.optimizer,
            seed,
            precision: self.precision,
        }
    }

    pub fn input_shape(&self) -> Shape3 {
        Shape3::new(1, self.folding.rows(), self.folding.cols())
    }
}

/// Conv stack (all ReLU), flatten, then one affine output unit.
pub fn build_model(cfg: &PcnnConfig) -> Result<Network> {
    build_model_seeded(cfg, cfg.seed)
}

pub fn build_model_seeded(cfg: &PcnnConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.kernel_size;
    let mut layers = Vec::with_capacity(cfg.conv_layers + 1);
    let mut channels = 1;
    for l in 1..=cfg.conv_layers {
        let out = if l == cfg.conv_layers { cfg.last_filters } else { cfg.filters };
        layers.push(Layer::Conv(ConvLayer::glorot(channels, out, k, k, Activation::Relu, &mut rng)));
        channels = out;
    }
    let shrink = cfg.conv_layers * (k - 1);
    let flat = channels * (cfg.folding.rows() - shrink) * (cfg.folding.cols() - shrink);
    layers.push(Layer::Dense(DenseLayer::glorot(flat, 1, Activation::Identity, &mut rng)));
    Network::new(cfg.input_shape(), layers)
}

pub use crate::nn::compute_loss;

/// Compares analytic and central-difference gradients of a freshly
/// initialized model on a random input in `[0, 1]` with a random target.
pub fn gradient_check_model(cfg: &PcnnConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let net = build_model_seeded(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let input: Vec<f64> = (0..cfg.folding.matrix_len()).map(|_| rng.random::<f64>()).collect();
    let target = rng.random::<f64>();
    gradient_check(&net, &input, target, &GradCheckOptions { seed, ..*opts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    /// Index into [`PcnnModel::networks`].
    pub network: usize,
    pub normalization: NormalizationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcnnModel {
    pub format_version: u32,
    pub config: PcnnConfig,
    pub slot_minutes: u32,
    pub slots_per_day: usize,
    pub segments: BTreeMap<String, SegmentEntry>,
    pub networks: Vec<Network>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub segments: Vec<String>,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub groups: Vec<GroupReport>,
    /// Not serialized so that reports of identical runs compare equal byte for byte.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl TrainReport {
    /// Validation MAE of the last epoch, averaged over groups weighted by
    /// instance count.
    pub fn final_validation_mae(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for g in &self.groups {
            let m = g.epochs.last()?.validation?;
            sum += m.mae * m.count as f64;
            count += m.count;
        }
        (count > 0).then(|| sum / count as f64)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Normalized folded inputs and raw targets for every eligible position with
/// a target day in `days`.
pub fn folded_instances(
    series: &CongestionSeries,
    days: Range<usize>,
    folding: &FoldingConfig,
    norm: &NormalizationParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Origin>)> {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut origins = Vec::new();
    for (m, n) in eligible_positions(series, days, folding.horizon) {
        let mat = build_multistep_matrix(series, m, n, folding.horizon, folding)?;
        features.extend(mat.values.iter().map(|&v| norm.normalize(v)));
        targets.push(mat.target);
        origins.push(mat.origin);
    }
    Ok((features, targets, origins))
}

fn check_series_set(series: &[CongestionSeries]) -> Result<()> {
    let first = series.first().ok_or_else(|| Error::Empty("no series to train on".into()))?;
    for s in series {
        if s.slots_per_day() != first.slots_per_day() || s.slot_minutes() != first.slot_minutes() {
            return Err(Error::Config(format!(
                "segment {} uses a different slot grid than {}",
                s.segment_id(),
                first.segment_id()
            )));
        }
    }
    let mut ids: Vec<&str> = series.iter().map(CongestionSeries::segment_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate segment ids".into()));
    }
    Ok(())
}

/// Trains one network per segment (or one pooled network), recording the
/// training loss and validation metrics after every epoch.
pub fn train(series: &[CongestionSeries], cfg: &PcnnConfig) -> Result<(PcnnModel, TrainReport)> {
    let started = Instant::now();
    cfg.validate()?;
    check_series_set(series)?;
    let mut sorted: Vec<&CongestionSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.segment_id().cmp(b.segment_id()));

    let mut norms = Vec::with_capacity(sorted.len());
    for s in &sorted {
        let (train_days, _, _) = cfg.splits.ranges(s.days())?;
        norms.push(NormalizationParams::fit(s.slice_days(train_days)?.values())?);
    }
    let groups: Vec<Vec<usize>> = match cfg.mode {
        TrainMode::PerSegment => (0..sorted.len()).map(|i| vec![i]).collect(),
        TrainMode::Pooled => vec![(0..sorted.len()).collect()],
    };

    let results: Vec<Result<(Network, GroupReport)>> = groups
        .par_iter()
        .enumerate()
        .map(|(gi, members)| {
            let seed = match cfg.mode {
                TrainMode::PerSegment => splitmix64(cfg.seed ^ splitmix64(gi as u64)),
                TrainMode::Pooled => cfg.seed,
            };
            train_group(&sorted, &norms, members, cfg, seed)
        })
        .collect();

    let mut networks = Vec::with_capacity(groups.len());
    let mut reports = Vec::with_capacity(groups.len());
    let mut segments = BTreeMap::new();
    for (gi, (res, members)) in results.into_iter().zip(&groups).enumerate() {
        let (net, report) = res?;
        for &i in members {
            segments.insert(sorted[i].segment_id().to_string(), SegmentEntry { network: gi, normalization: norms[i] });
        }
        networks.push(net);
        reports.push(report);
    }
    let model = PcnnModel {
        format_version: MODEL_FORMAT_VERSION,
        config: cfg.clone(),
        slot_minutes: sorted[0].slot_minutes(),
        slots_per_day: sorted[0].slots_per_day(),
        segments,
        networks,
    };
    let report = TrainReport { groups: reports, wall_time_seconds: started.elapsed().as_secs_f64() };
    Ok((model, report))
}

fn train_group(
    sorted: &[&CongestionSeries],
    norms: &[NormalizationParams],
    members: &[usize],
    cfg: &PcnnConfig,
    seed: u64,
) -> Result<(Network, GroupReport)> {
    let mut data = Dataset::new(cfg.folding.matrix_len());
    let mut val_x = Vec::new();
    let mut val_y = Vec::new();
    let mut val_norm = Vec::new();
    for &i in members {
        let s = sorted[i];
        let norm = &norms[i];
        let (train_days, val_days, _) = cfg.splits.ranges(s.days())?;
        let (x, y, _) = folded_instances(s, train_days, &cfg.folding, norm)?;
        data.features.extend(x);
        data.targets.extend(y.iter().map(|&v| norm.normalize(v)));
        let (x, y, _) = folded_instances(s, val_days, &cfg.folding, norm)?;
        val_norm.extend(std::iter::repeat_n(*norm, y.len()));
        val_x.extend(x);
        val_y.extend(y);
    }
    if data.is_empty() {
        return Err(Error::Empty("training split yields no instances".into()));
    }
    log::info!("training {} segment(s): {} train / {} validation instances", members.len(), data.len(), val_y.len());

    let mut net = build_model_seeded(cfg, seed)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    fit_network(&mut net, &data, &cfg.fit_options(seed), |epoch, net, loss| {
        let validation = if val_y.is_empty() {
            None
        } else {
            let raw = net.predict_batch(&val_x)?;
            let pred: Vec<f64> = raw.iter().zip(&val_norm).map(|(&p, n)| n.denormalize(p).max(0.0)).collect();
            Some(metrics_from_pairs(&pred, &val_y, DEFAULT_MRE_EPSILON)?)
        };
        log::debug!("epoch {epoch}: loss {loss:.6}");
        epochs.push(EpochRecord { epoch, train_loss: loss, validation });
        Ok(())
    })?;
    let report = GroupReport {
        segments: members.iter().map(|&i| sorted[i].segment_id().to_string()).collect(),
        train_instances: data.len(),
        validation_instances: val_y.len(),
        epochs,
    };
    Ok((net, report))
}

/// Clamped forecast plus the raw network output in congestion units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    pub raw: f64,
}

impl PcnnModel {
    pub fn entry(&self, segment_id: &str) -> Result<&SegmentEntry> {
        self.segments.get(segment_id).ok_or_else(|| Error::Incompatible(format!("model has no segment {segment_id:?}")))
    }

    /// Errors unless `folding` has the window sizes the model was trained with.
    pub fn check_folding(&self, folding: &FoldingConfig) -> Result<()> {
        let own = &self.config.folding;
        if own.days != folding.days || own.half_window != folding.half_window {
            return Err(Error::Incompatible(format!(
                "model trained with d={}, t={}; got d={}, t={}",
                own.days, own.half_window, folding.days, folding.half_window
            )));
        }
        Ok(())
    }

    fn check_series(&self, series: &CongestionSeries) -> Result<&SegmentEntry> {
        if series.slots_per_day() != self.slots_per_day {
            return Err(Error::Incompatible(format!(
                "model expects {} slots per day, series {} has {}",
                self.slots_per_day,
                series.segment_id(),
                series.slots_per_day()
            )));
        }
        self.entry(series.segment_id())
    }

    /// Forecasts `c[m][n + u - 1]` from data up to slot `n - 1` of day `m`.
    pub fn predict(&self, series: &CongestionSeries, m: usize, n: usize, u: usize) -> Result<Prediction> {
        Ok(self.predict_many(series, &[(m, n)], u)?[0])
    }

    pub fn predict_many(
        &self,
        series: &CongestionSeries,
        positions: &[(usize, usize)],
        u: usize,
    ) -> Result<Vec<Prediction>> {
        let entry = self.check_series(series)?;
        let folding = FoldingConfig { horizon: u, ..self.config.folding };
        folding.validate()?;
        let mut x = Vec::with_capacity(positions.len() * folding.matrix_len());
        for &(m, n) in positions {
            let mat = build_multistep_matrix(series, m, n, u, &folding)?;
            x.extend(mat.values.iter().map(|&v| entry.normalization.normalize(v)));
        }
        let out = self.networks[entry.network].predict_batch(&x)?;
        Ok(out
            .into_iter()
            .map(|p| {
                let raw = entry.normalization.denormalize(p);
                Prediction { value: raw.max(0.0), raw }
            })
            .collect())
    }

    /// Forecast rows for every eligible target in `days` of every series.
    pub fn forecast(&self, series: &[CongestionSeries], days: Range<usize>, u: usize) -> Result<Vec<ForecastRow>> {
        let mut rows = Vec::new();
        for s in series {
            let positions: Vec<(usize, usize)> = eligible_positions(s, days.clone(), u).collect();
            let preds = self.predict_many(s, &positions, u)?;
            for (&(m, n), p) in positions.iter().zip(&preds) {
                let target = n + u - 1;
                rows.push(ForecastRow::new(s.segment_id(), m, n, s.hour_of_slot(target), p.value, s.value(m, target))?);
            }
        }
        Ok(rows)
    }

    pub fn write_json(&self, output: impl Write) -> Result<()> {
        let mut output = output;
        serde_json::to_writer(&mut output, self)?;
        output.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(input: impl Read) -> Result<Self> {
        let model: Self = serde_json::from_reader(input)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "model format version {} (this build reads {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        if model.segments.values().any(|e| e.network >= model.networks.len()) {
            return Err(Error::Incompatible("segment refers to a missing network".into()));
        }
        if model.networks.iter().any(|n| n.input_shape() != model.config.input_shape()) {
            return Err(Error::Incompatible("network input shape does not match the folding window".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn series(id: &str, days: usize, slots: usize, f: impl Fn(usize, usize) -> f64) -> CongestionSeries {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let dates = (0..days).map(|d| start + chrono::Days::new(d as u64)).collect();
        let values = (0..days).flat_map(|d| (0..slots).map(move |s| (d, s))).map(|(d, s)| f(d, s)).collect();
        CongestionSeries::new(id, 60, 0, slots as u32, dates, values, None).unwrap()
    }

    fn small_cfg() -> PcnnConfig {
        PcnnConfig {
            folding: FoldingConfig::new(3, 3, 1).unwrap(),
            conv_layers: 2,
            filters: 4,
            last_filters: 2,
            epochs: 3,
            batch_size: 16,
            splits: Splits { train_days: 6, validation_days: 2, test_days: 2 },
            ..Default::default()
        }
    }

    #[test]
    fn default_architecture() {
        let net = build_model(&PcnnConfig::default()).unwrap();
        let shapes = net.layer_shapes().unwrap();
        let hw: Vec<(usize, usize)> = shapes[..5].iter().map(|s| (s.height, s.width)).collect();
        assert_eq!(hw, vec![(9, 11), (8, 10), (7, 9), (6, 8), (5, 7)]);
        assert_eq!(shapes[4].len(), 560);
        // conv1 + 3 middle convs + conv5 + head
        let expected = (64 * 4 + 64) + 3 * (64 * 64 * 4 + 64) + (16 * 64 * 4 + 16) + (560 + 1);
        assert_eq!(net.param_count(), expected);
        assert_eq!(expected, 54_337);
    }

    #[test]
    fn single_conv_layer() {
        let cfg = PcnnConfig { conv_layers: 1, ..Default::default() };
        let net = build_model(&cfg).unwrap();
        assert_eq!(net.layers().len(), 2);
        match &net.layers()[0] {
            Layer::Conv(c) => assert_eq!((c.in_channels, c.out_channels), (1, 16)),
            _ => panic!("expected conv"),
        }
    }

    #[test]
    fn depth_limit() {
        for l in 1..=9 {
            let cfg = PcnnConfig { conv_layers: l, ..Default::default() };
            assert_eq!(build_model(&cfg).is_ok(), l < 10, "L={l}");
        }
        let cfg = PcnnConfig { conv_layers: 10, ..Default::default() };
        assert!(build_model(&cfg).is_err());
    }

    #[test]
    fn instance_count_is_days_minus_one_times_slots() {
        let s = series("a", 10, 8, |d, s| (d + s) as f64 * 0.1);
        let norm = NormalizationParams::new(0.0, 2.0).unwrap();
        let (x, y, _) = folded_instances(&s, 0..10, &FoldingConfig::new(3, 3, 1).unwrap(), &norm).unwrap();
        assert_eq!(y.len(), 9 * 8);
        assert_eq!(x.len(), 9 * 8 * 24);
    }

    #[test]
    fn train_predict_roundtrip() {
        let data = vec![
            series("b", 10, 12, |d, s| 1.0 + ((s as f64) * 0.5).sin() + d as f64 * 0.01),
            series("a", 10, 12, |_, s| (s % 4) as f64 * 0.3),
        ];
        let cfg = small_cfg();
        let (model, report) = train(&data, &cfg).unwrap();
        assert_eq!(model.networks.len(), 2);
        assert_eq!(report.groups.len(), 2);
        assert_eq!(report.groups[0].segments, vec!["a".to_string()]);
        assert!(report.groups.iter().all(|g| g.epochs.len() == 3));
        assert!(report.groups.iter().all(|g| g.epochs.iter().all(|e| e.train_loss.is_finite())));
        assert!(report.final_validation_mae().is_some());

        let p = model.predict(&data[0], 9, 4, 1).unwrap();
        assert!(p.value >= 0.0 && p.value == p.raw.max(0.0));
        // u = 1 prediction is the forward pass on the folded matrix
        let mat = crate::folding::build_input_matrix(&data[0], 9, 4, &cfg.folding).unwrap();
        let e = model.entry("b").unwrap();
        let x: Vec<f64> = mat.values.iter().map(|&v| e.normalization.normalize(v)).collect();
        let direct = e.normalization.denormalize(model.networks[e.network].predict(&x).unwrap());
        assert_eq!(p.raw, direct);
        assert!(model.predict(&data[0], 9, 4, 3).is_ok());

        let mut buf = Vec::new();
        model.write_json(&mut buf).unwrap();
        let back = PcnnModel::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, model);

        let pooled = PcnnConfig { mode: TrainMode::Pooled, ..cfg };
        let (model, report) = train(&data, &pooled).unwrap();
        assert_eq!(model.networks.len(), 1);
        assert_eq!(report.groups[0].segments.len(), 2);
    }

    #[test]
    fn series_order_does_not_matter() {
        let a = series("a", 10, 12, |d, s| (s as f64 * 0.3).cos().abs() + d as f64 * 0.02);
        let b = series("b", 10, 12, |_, s| (s % 3) as f64);
        let cfg = PcnnConfig { mode: TrainMode::Pooled, ..small_cfg() };
        let (m1, mut r1) = train(&[a.clone(), b.clone()], &cfg).unwrap();
        let (m2, mut r2) = train(&[b, a], &cfg).unwrap();
        r1.wall_time_seconds = 0.0;
        r2.wall_time_seconds = 0.0;
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn incompatible_inputs() {
        let s = series("a", 10, 12, |_, s| s as f64 * 0.1);
        let (model, _) = train(std::slice::from_ref(&s), &small_cfg()).unwrap();
        let other = series("zzz", 10, 12, |_, _| 0.0);
        assert!(matches!(model.predict(&other, 5, 0, 1), Err(Error::Incompatible(_))));
        let coarse = series("a", 10, 6, |_, _| 0.0);
        assert!(matches!(model.predict(&coarse, 5, 0, 1), Err(Error::Incompatible(_))));
        assert!(model.check_folding(&FoldingConfig::new(4, 3, 1).unwrap()).is_err());
        assert!(model.check_folding(&FoldingConfig::new(3, 3, 2).unwrap()).is_ok());
        assert!(train(&[s.clone(), s], &small_cfg()).is_err());
        assert!(train(&[], &small_cfg()).is_err());
    }
}
