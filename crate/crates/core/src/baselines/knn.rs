use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset that keeps inverse-distance weights finite for exact matches.
const DISTANCE_OFFSET: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborWeighting {
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    /// Geometric decay of feature weights with temporal distance.
    pub decay: f64,
    pub weighting: NeighborWeighting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 15, decay: 0.9, weighting: NeighborWeighting::InverseDistance }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        Ok(())
    }
}

/// Weights for a 1D pattern of `half_window` recent slots (oldest first)
/// followed by `days` same-slot values (most recent day first). The newest
/// slot and the previous day both weigh 1.
pub fn knn_feature_weights(half_window: usize, days: usize, decay: f64) -> Vec<f64> {
    let recent = (0..half_window).map(|i| decay.powi((half_window - 1 - i) as i32));
    let daily = (0..days).map(|i| decay.powi(i as i32));
    recent.chain(daily).collect()
}

/// Weighted-Euclidean K-NN over fixed-length patterns. Neighbours are ranked
/// by distance; equal distances fall back to the stored order, which
/// [`KnnModel::fit`] makes canonical.
pub fn knn_predict(
    query: &[f64],
    patterns: &[f64],
    targets: &[f64],
    feature_weights: &[f64],
    k: usize,
    weighting: NeighborWeighting,
) -> Result<f64> {
    let len = feature_weights.len();
    if targets.is_empty() {
        return Err(Error::Empty("K-NN training set".into()));
    }
    if query.len() != len || patterns.len() != targets.len() * len {
        return Err(Error::Dimension(format!(
            "query of {} and {} pattern values for pattern length {len}",
            query.len(),
            patterns.len()
        )));
    }
    if k == 0 || k > targets.len() {
        return Err(Error::Config(format!("K = {k} with {} training patterns", targets.len())));
    }
    let mut dist: Vec<(f64, usize)> = patterns
        .chunks(len)
        .enumerate()
        .map(|(i, p)| {
            let d2: f64 = p.iter().zip(query).zip(feature_weights).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
            (d2.sqrt(), i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, cmp);
        dist.truncate(k);
    }
    dist.sort_by(cmp);
    let (mut num, mut den) = (0.0, 0.0);
    for &(d, i) in &dist {
        let w = match weighting {
            NeighborWeighting::Uniform => 1.0,
            NeighborWeighting::InverseDistance => 1.0 / (d + DISTANCE_OFFSET),
        };
        num += w * targets[i];
        den += w;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub config: KnnConfig,
    pub feature_weights: Vec<f64>,
    pub patterns: Vec<f64>,
    pub targets: Vec<f64>,
}

impl KnnModel {
    /// Stores the training patterns sorted by (pattern, target) so that
    /// predictions do not depend on the order instances arrive in.
    pub fn fit(patterns: &[f64], targets: &[f64], half_window: usize, days: usize, config: KnnConfig) -> Result<Self> {
        config.validate()?;
        let len = half_window + days;
        if patterns.len() != targets.len() * len {
            return Err(Error::Dimension(format!("{} values for {} patterns of {len}", patterns.len(), targets.len())));
        }
        if targets.is_empty() {
            return Err(Error::Empty("K-NN training set".into()));
        }
        let mut idx: Vec<usize> = (0..targets.len()).collect();
        let row = |i: usize| &patterns[i * len..(i + 1) * len];
        idx.sort_by(|&a, &b| {
            row(a)
                .iter()
                .zip(row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(targets[a].total_cmp(&targets[b]))
        });
        Ok(Self {
            config,
            feature_weights: knn_feature_weights(half_window, days, config.decay),
            patterns: idx.iter().flat_map(|&i| row(i).iter().copied()).collect(),
            targets: idx.iter().map(|&i| targets[i]).collect(),
        })
    }

    /// Uses `min(K, training size)` neighbours.
    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        let k = self.config.k.min(self.targets.len());
        knn_predict(query, &self.patterns, &self.targets, &self.feature_weights, k, self.config.weighting)
    }
}
