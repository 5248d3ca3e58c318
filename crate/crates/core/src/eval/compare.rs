//! Runs every method on identical chronological splits and instances, at
//! one or more slot granularities.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, ForecastRow, Metrics, DEFAULT_MRE_EPSILON};
use crate::baselines::{arima_fit, ha_predict, lr_fit, mlp_fit, ArimaOrder, InputMode, KnnConfig, KnnModel, MlpConfig};
use crate::domain::{CongestionSeries, NormalizationParams};
use crate::error::{Error, Result};
use crate::folding::{build_matrices, build_vectors, eligible_positions, flatten_matrix, Origin};
use crate::nn::Dataset;
use crate::pcnn::{splitmix64, train, PcnnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Pcnn,
    Ha(InputMode),
    Lr(InputMode),
    Knn,
    Mlp(InputMode),
    Arima,
    Sarima,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Pcnn,
        Method::Ha(InputMode::Vector1d),
        Method::Ha(InputMode::Matrix2d),
        Method::Lr(InputMode::Vector1d),
        Method::Lr(InputMode::Matrix2d),
        Method::Knn,
        Method::Mlp(InputMode::Vector1d),
        Method::Mlp(InputMode::Matrix2d),
        Method::Arima,
        Method::Sarima,
    ];

    pub fn label(&self) -> String {
        match self {
            Self::Pcnn => "PCNN".into(),
            Self::Ha(m) => format!("HA({})", m.suffix()),
            Self::Lr(m) => format!("LR({})", m.suffix()),
            Self::Knn => "K-NN".into(),
            Self::Mlp(m) => format!("MLP({})", m.suffix()),
            Self::Arima => "ARIMA".into(),
            Self::Sarima => "SARIMA".into(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts labels such as `PCNN`, `MLP(2)`, `mlp2` or `knn`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| {
                m.label().chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase() == key
            })
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    /// Folding, splits, seed and the PCNN itself.
    pub pcnn: PcnnConfig,
    pub knn: KnnConfig,
    pub mlp1: MlpConfig,
    pub mlp2: MlpConfig,
    pub arima: ArimaOrder,
    /// ARIMA order applied after one seasonal difference at a lag of one day.
    pub sarima: ArimaOrder,
    pub slot_minutes: Vec<u32>,
    pub mre_epsilon: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            pcnn: PcnnConfig::default(),
            knn: KnnConfig::default(),
            mlp1: MlpConfig::one_dimensional(),
            mlp2: MlpConfig::two_dimensional(),
            arima: ArimaOrder::default(),
            sarima: ArimaOrder { p: 2, d: 0, q: 0 },
            slot_minutes: vec![5, 10, 15, 30, 60],
            mre_epsilon: DEFAULT_MRE_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: String,
    pub slot_minutes: u32,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

/// Raw features and targets of one split.
struct Instances {
    features: Vec<f64>,
    len: usize,
    targets: Vec<f64>,
    origins: Vec<Origin>,
}

fn instances(
    series: &CongestionSeries,
    days: std::ops::Range<usize>,
    mode: InputMode,
    opts: &CompareOptions,
) -> Result<Instances> {
    let folding = &opts.pcnn.folding;
    let (features, len, targets, origins) = match mode {
        InputMode::Vector1d => {
            let v = build_vectors(series, days, folding)?;
            let f = v.iter().flat_map(|i| i.values.iter().copied()).collect();
            (f, folding.vector_len(), v.iter().map(|i| i.target).collect(), v.into_iter().map(|i| i.origin).collect())
        }
        InputMode::Matrix2d => {
            let m = build_matrices(series, days, folding)?;
            let f = m.iter().flat_map(flatten_matrix).collect();
            (f, folding.matrix_len(), m.iter().map(|i| i.target).collect(), m.into_iter().map(|i| i.origin).collect())
        }
    };
    Ok(Instances { features, len, targets, origins })
}

fn rows_for(series: &CongestionSeries, origins: &[Origin], preds: &[f64], u: usize) -> Result<Vec<ForecastRow>> {
    origins
        .iter()
        .zip(preds)
        .map(|(o, &p)| {
            let target = o.slot + u - 1;
            ForecastRow::new(
                series.segment_id(),
                o.day,
                o.slot,
                series.hour_of_slot(target),
                p.max(0.0),
                series.value(o.day, target),
            )
        })
        .collect()
}

fn evaluate_segment(
    method: Method,
    series: &CongestionSeries,
    index: usize,
    opts: &CompareOptions,
) -> Result<Vec<ForecastRow>> {
    let (train_days, _, test_days) = opts.pcnn.splits.ranges(series.days())?;
    let u = opts.pcnn.folding.horizon;
    let seed = splitmix64(opts.pcnn.seed ^ splitmix64(index as u64));
    match method {
        Method::Pcnn => unreachable!("trained over all segments at once"),
        Method::Ha(mode) => {
            let test = instances(series, test_days, mode, opts)?;
            let preds = test.features.chunks(test.len).map(ha_predict).collect::<Result<Vec<_>>>()?;
            rows_for(series, &test.origins, &preds, u)
        }
        Method::Lr(mode) => {
            let train = instances(series, train_days, mode, opts)?;
            let test = instances(series, test_days, mode, opts)?;
            let model = lr_fit(&train.features, train.len, &train.targets)?;
            let preds: Vec<f64> = test.features.chunks(test.len).map(|x| model.predict(x)).collect();
            rows_for(series, &test.origins, &preds, u)
        }
        Method::Knn => {
            let train = instances(series, train_days, InputMode::Vector1d, opts)?;
            let test = instances(series, test_days, InputMode::Vector1d, opts)?;
            let folding = &opts.pcnn.folding;
            let model = KnnModel::fit(&train.features, &train.targets, folding.half_window, folding.days, opts.knn)?;
            let preds = test.features.chunks(test.len).map(|q| model.predict(q)).collect::<Result<Vec<_>>>()?;
            rows_for(series, &test.origins, &preds, u)
        }
        Method::Mlp(mode) => {
            let train = instances(series, train_days.clone(), mode, opts)?;
            let test = instances(series, test_days, mode, opts)?;
            let norm = NormalizationParams::fit(series.slice_days(train_days)?.values())?;
            let mut data = Dataset::new(train.len);
            data.features = train.features.iter().map(|&v| norm.normalize(v)).collect();
            data.targets = train.targets.iter().map(|&v| norm.normalize(v)).collect();
            let mut cfg = match mode {
                InputMode::Vector1d => opts.mlp1,
                InputMode::Matrix2d => opts.mlp2,
            };
            cfg.fit.seed = seed;
            let net = mlp_fit(&data, &cfg)?;
            let x: Vec<f64> = test.features.iter().map(|&v| norm.normalize(v)).collect();
            let preds: Vec<f64> = net.predict_batch(&x)?.into_iter().map(|p| norm.denormalize(p)).collect();
            rows_for(series, &test.origins, &preds, u)
        }
        Method::Arima | Method::Sarima => {
            let n = series.slots_per_day();
            let values = series.values();
            let (order, lag) = match method {
                Method::Arima => (opts.arima, None),
                _ => (opts.sarima, Some(n)),
            };
            let model = arima_fit(&values[train_days.start * n..train_days.end * n], order, lag)?;
            let positions: Vec<(usize, usize)> = eligible_positions(series, test_days, u).collect();
            let preds =
                positions.iter().map(|&(m, s)| model.forecast(&values[..m * n + s], u)).collect::<Result<Vec<_>>>()?;
            let origins: Vec<Origin> = positions
                .iter()
                .map(|&(day, slot)| Origin { segment_id: series.segment_id().to_string(), day, slot })
                .collect();
            rows_for(series, &origins, &preds, u)
        }
    }
}

/// Test-split forecast rows of one method over all segments.
pub fn evaluate_method(method: Method, series: &[CongestionSeries], opts: &CompareOptions) -> Result<Vec<ForecastRow>> {
    if series.is_empty() {
        return Err(Error::Empty("no series".into()));
    }
    if method == Method::Pcnn {
        let (model, _) = train(series, &opts.pcnn)?;
        let mut sorted: Vec<CongestionSeries> = series.to_vec();
        sorted.sort_by(|a, b| a.segment_id().cmp(b.segment_id()));
        let (_, _, test) = opts.pcnn.splits.ranges(sorted[0].days())?;
        return model.forecast(&sorted, test, opts.pcnn.folding.horizon);
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series[a].segment_id().cmp(series[b].segment_id()));
    let parts: Vec<Result<Vec<ForecastRow>>> =
        order.par_iter().enumerate().map(|(i, &s)| evaluate_segment(method, &series[s], i, opts)).collect();
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

/// Table of test metrics per method and slot size. A failing method marks
/// its cell and the others still run.
pub fn compare_methods(
    series: &[CongestionSeries],
    methods: &[Method],
    opts: &CompareOptions,
) -> Result<Vec<ComparisonCell>> {
    if series.is_empty() {
        return Err(Error::Empty("no series".into()));
    }
    let mut cells = Vec::with_capacity(methods.len() * opts.slot_minutes.len());
    for &minutes in &opts.slot_minutes {
        let coarse: Result<Vec<CongestionSeries>> = series
            .iter()
            .map(|s| if s.slot_minutes() == minutes { Ok(s.clone()) } else { s.coarsen(minutes) })
            .collect();
        for &method in methods {
            let outcome = coarse
                .as_ref()
                .map_err(|e| Error::Config(e.to_string()))
                .and_then(|c| evaluate_method(method, c, opts))
                .and_then(|rows| compute_metrics(&rows, opts.mre_epsilon));
            if let Err(e) = &outcome {
                log::warn!("{} at {minutes} min failed: {e}", method.label());
            }
            cells.push(ComparisonCell {
                method: method.label(),
                slot_minutes: minutes,
                error: outcome.as_ref().err().map(ToString::to_string),
                metrics: outcome.ok(),
            });
        }
    }
    Ok(cells)
}

/// `comparison.csv`: one row per method × slot size.
pub fn write_comparison_csv(output: impl Write, cells: &[ComparisonCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["method", "slot_minutes", "count", "mae", "rmse", "mre", "mre_excluded", "error"])?;
    for c in cells {
        let m = c.metrics.as_ref();
        w.write_record([
            c.method.clone(),
            c.slot_minutes.to_string(),
            m.map_or(String::new(), |m| m.count.to_string()),
            m.map_or(String::new(), |m| m.mae.to_string()),
            m.map_or(String::new(), |m| m.rmse.to_string()),
            m.and_then(|m| m.mre).map_or(String::new(), |v| v.to_string()),
            m.map_or(String::new(), |m| m.mre_excluded.to_string()),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
