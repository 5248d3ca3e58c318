use crate::error::{Error, Result};

/// Mean of the input window.
pub fn ha_predict(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("historical average of no values".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
