use std::path::Path;

use anyhow::Context;
use pcnn_core::baselines::{ArimaOrder, KnnConfig, MlpConfig};
use pcnn_core::eval::{CompareOptions, Method, DEFAULT_MRE_EPSILON};
use pcnn_core::ingest::AggregationConfig;
use pcnn_core::nn::{GradCheckOptions, Precision};
use pcnn_core::pcnn::PcnnConfig;
use pcnn_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// vehicle_id,camera_id,timestamp_utc
    #[default]
    Passages,
    /// segment_id,date,slot_index,avg_travel_time_s
    Aggregated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub format: InputFormat,
    pub strict: bool,
    /// Longest gap between two sightings still paired into a traversal.
    pub max_gap_seconds: i64,
    pub aggregation: AggregationConfig,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { format: InputFormat::Passages, strict: true, max_gap_seconds: 3600, aggregation: Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSection {
    pub methods: Vec<String>,
    pub slot_minutes: Vec<u32>,
    pub knn: KnnConfig,
    pub mlp1: MlpConfig,
    pub mlp2: MlpConfig,
    pub arima: ArimaOrder,
    pub sarima: ArimaOrder,
    pub mre_epsilon: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        let opts = CompareOptions::default();
        Self {
            methods: Method::ALL.iter().map(Method::label).collect(),
            slot_minutes: opts.slot_minutes,
            knn: opts.knn,
            mlp1: opts.mlp1,
            mlp2: opts.mlp2,
            arima: opts.arima,
            sarima: opts.sarima,
            mre_epsilon: DEFAULT_MRE_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepGrid {
    /// Every (d, t) pair.
    #[default]
    Window,
    /// Every conv depth at the configured (d, t).
    Depth,
    /// Window grid first, then depth at the best window.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub grid: SweepGrid,
    pub days: Vec<usize>,
    pub half_windows: Vec<usize>,
    pub conv_layers: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: SweepGrid::Window,
            days: vec![3, 6, 9, 12],
            half_windows: vec![3, 6, 9, 12],
            conv_layers: (1..=9).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSection {
    pub seeds: u64,
    pub options: GradCheckOptions,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { seeds: 20, options: GradCheckOptions::default() }
    }
}

/// Everything a command needs besides its paths. The top-level grid, seed
/// and precision are copied into every section by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub slot_minutes: u32,
    pub start_hour: u32,
    pub end_hour: u32,
    pub ingest: IngestSection,
    pub synth: SynthConfig,
    pub pcnn: PcnnConfig,
    pub compare: CompareSection,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            slot_minutes: 5,
            start_hour: 6,
            end_hour: 24,
            ingest: Default::default(),
            synth: Default::default(),
            pcnn: Default::default(),
            compare: Default::default(),
            sweep: Default::default(),
            gradcheck: Default::default(),
        }
    }
}

/// Parsed config plus which optional sections the file actually set.
pub struct Loaded {
    pub config: RunConfig,
    pub folding_given: bool,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded { config: RunConfig::default(), folding_given: false });
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    let folding_given = table.get("pcnn").and_then(|p| p.get("folding")).is_some();
    let config = RunConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    Ok(Loaded { config, folding_given })
}

impl RunConfig {
    pub fn resolve(&mut self) {
        let (seed, precision) = (self.seed, self.precision);
        let (minutes, start, end) = (self.slot_minutes, self.start_hour, self.end_hour);
        let agg = &mut self.ingest.aggregation;
        agg.slot_minutes = minutes;
        agg.start_hour = start;
        agg.end_hour = end;
        self.synth.slot_minutes = minutes;
        self.synth.start_hour = start;
        self.synth.end_hour = end;
        self.synth.seed = seed;
        self.pcnn.seed = seed;
        self.pcnn.precision = precision;
        for mlp in [&mut self.compare.mlp1, &mut self.compare.mlp2] {
            mlp.fit.seed = seed;
            mlp.fit.precision = precision;
        }
        self.gradcheck.options.seed = seed;
    }

    pub fn compare_options(&self) -> CompareOptions {
        let c = &self.compare;
        CompareOptions {
            pcnn: self.pcnn.clone(),
            knn: c.knn,
            mlp1: c.mlp1,
            mlp2: c.mlp2,
            arima: c.arima,
            sarima: c.sarima,
            slot_minutes: c.slot_minutes.clone(),
            mre_epsilon: c.mre_epsilon,
        }
    }

    pub fn methods(&self) -> anyhow::Result<Vec<Method>> {
        self.compare.methods.iter().map(|m| m.parse::<Method>().map_err(anyhow::Error::from)).collect()
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing the run config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.resolve();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[pcnn]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pcnn.epochs, 3);
        assert_eq!(cfg.pcnn.conv_layers, 5);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 7\n").is_err());
    }
}
