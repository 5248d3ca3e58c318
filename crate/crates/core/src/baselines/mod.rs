//! Comparison forecasters: historical average, linear regression, weighted
//! K-nearest neighbours, multilayer perceptrons and (seasonal) ARIMA.

mod arima;
mod ha;
mod knn;
mod lr;
mod mlp;

use serde::{Deserialize, Serialize};

pub use arima::{arima_fit, difference, difference_heads, integrate, ArimaModel, ArimaOrder};
pub use ha::ha_predict;
pub use knn::{knn_feature_weights, knn_predict, KnnConfig, KnnModel, NeighborWeighting};
pub use lr::{lr_fit, LinearModel, RIDGE_FALLBACK};
pub use mlp::{build_mlp, mlp_fit, MlpConfig};

/// Which folding a feature-based baseline consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Recent `t` slots plus the target slot of the previous `d` days.
    Vector1d,
    /// The flattened `(d + 1) × 2t` folded matrix.
    Matrix2d,
}

impl InputMode {
    pub fn suffix(self) -> &'static str {
        match self {
            Self::Vector1d => "1",
            Self::Matrix2d => "2",
        }
    }
}

/// Baseline method plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineSpec {
    Ha { input: InputMode },
    Lr { input: InputMode },
    Knn(KnnConfig),
    Mlp { input: InputMode, config: MlpConfig },
    Arima { order: ArimaOrder, seasonal: bool },
}

impl BaselineSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Ha { input } => format!("HA({})", input.suffix()),
            Self::Lr { input } => format!("LR({})", input.suffix()),
            Self::Knn(_) => "K-NN".into(),
            Self::Mlp { input, .. } => format!("MLP({})", input.suffix()),
            Self::Arima { seasonal: false, .. } => "ARIMA".into(),
            Self::Arima { seasonal: true, .. } => "SARIMA".into(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self {
            Self::Knn(c) => c.validate(),
            Self::Mlp { config, .. } => config.validate(),
            _ => Ok(()),
        }
    }
}
