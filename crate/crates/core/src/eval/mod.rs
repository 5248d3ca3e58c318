//! Forecast error metrics (MAE, RMSE, MRE), grouped breakdowns, the MRE
//! distribution, and the multi-method comparison harness.

mod compare;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{classify_condition, ConditionGroup};
use crate::error::{Error, Result};

pub use compare::{compare_methods, evaluate_method, write_comparison_csv, CompareOptions, ComparisonCell, Method};

/// Observations at or below this level are left out of MRE.
pub const DEFAULT_MRE_EPSILON: f64 = 1e-6;

/// Resolution of the MRE cumulative distribution table.
pub const CDF_STEP: f64 = 0.05;

/// Thresholds beyond this are collapsed into a single closing row.
const CDF_MAX_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub segment_id: String,
    pub day: usize,
    pub slot: usize,
    pub predicted: f64,
    pub observed: f64,
    pub condition: ConditionGroup,
    pub hour: u32,
}

impl ForecastRow {
    /// Labels the condition from the observed level.
    pub fn new(
        segment_id: impl Into<String>,
        day: usize,
        slot: usize,
        hour: u32,
        predicted: f64,
        observed: f64,
    ) -> Result<Self> {
        if !predicted.is_finite() {
            return Err(Error::NonFinite(format!("prediction {predicted} at day {day}, slot {slot}")));
        }
        Ok(Self {
            segment_id: segment_id.into(),
            day,
            slot,
            predicted,
            observed,
            condition: classify_condition(observed)?,
            hour,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every observation was excluded.
    pub mre: Option<f64>,
    pub mre_count: usize,
    pub mre_excluded: usize,
}

/// MAE and RMSE over all pairs; MRE over pairs with `observed > mre_epsilon`.
pub fn metrics_from_pairs(predicted: &[f64], observed: &[f64], mre_epsilon: f64) -> Result<Metrics> {
    if predicted.len() != observed.len() {
        return Err(Error::Dimension(format!("{} predictions for {} observations", predicted.len(), observed.len())));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("forecast report".into()));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut rel_count = 0usize;
    for (&p, &o) in predicted.iter().zip(observed) {
        let e = (p - o).abs();
        abs_sum += e;
        sq_sum += e * e;
        if o > mre_epsilon {
            rel_sum += e / o;
            rel_count += 1;
        }
    }
    let n = predicted.len();
    Ok(Metrics {
        count: n,
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        mre: (rel_count > 0).then(|| rel_sum / rel_count as f64),
        mre_count: rel_count,
        mre_excluded: n - rel_count,
    })
}

pub fn compute_metrics(rows: &[ForecastRow], mre_epsilon: f64) -> Result<Metrics> {
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let o: Vec<f64> = rows.iter().map(|r| r.observed).collect();
    metrics_from_pairs(&p, &o, mre_epsilon)
}

fn metrics_of<'a>(rows: impl Iterator<Item = &'a ForecastRow>, eps: f64) -> Option<Metrics> {
    let (p, o): (Vec<f64>, Vec<f64>) = rows.map(|r| (r.predicted, r.observed)).unzip();
    (!p.is_empty()).then(|| metrics_from_pairs(&p, &o, eps).expect("non-empty, equal lengths"))
}

/// One cell of the condition × hour grid. `None` keys mean "all".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub condition: Option<ConditionGroup>,
    pub hour: Option<u32>,
    /// Absent when no row falls in the cell.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub overall: Metrics,
    pub by_condition: BTreeMap<ConditionGroup, Option<Metrics>>,
    pub by_hour: BTreeMap<u32, Metrics>,
    pub grid: Vec<BreakdownCell>,
    /// `(threshold, fraction of per-row relative errors <= threshold)`.
    pub mre_cdf: Vec<(f64, f64)>,
}

/// Per-row relative errors `|pred - obs| / obs` for MRE-eligible rows.
pub fn relative_errors(rows: &[ForecastRow], mre_epsilon: f64) -> Vec<f64> {
    rows.iter().filter(|r| r.observed > mre_epsilon).map(|r| (r.predicted - r.observed).abs() / r.observed).collect()
}

/// Empirical CDF sampled every [`CDF_STEP`]. The table always ends at 1.0.
pub fn mre_cdf(relative: &[f64]) -> Vec<(f64, f64)> {
    if relative.is_empty() {
        return Vec::new();
    }
    let mut sorted = relative.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().expect("non-empty");
    let steps = ((max.min(CDF_MAX_THRESHOLD) / CDF_STEP).ceil() as usize).max(1);
    let n = sorted.len() as f64;
    let mut table: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let thr = i as f64 * CDF_STEP;
            let below = sorted.partition_point(|&v| v <= thr + 1e-12);
            (thr, below as f64 / n)
        })
        .collect();
    if table.last().is_some_and(|&(_, f)| f < 1.0) {
        table.push((max, 1.0));
    }
    table
}

pub fn breakdown(rows: &[ForecastRow], mre_epsilon: f64) -> Result<Breakdown> {
    let overall = compute_metrics(rows, mre_epsilon)?;
    let mut hours: Vec<u32> = rows.iter().map(|r| r.hour).collect();
    hours.sort_unstable();
    hours.dedup();

    let by_condition = ConditionGroup::ALL
        .iter()
        .map(|&g| (g, metrics_of(rows.iter().filter(|r| r.condition == g), mre_epsilon)))
        .collect();
    let by_hour = hours
        .iter()
        .filter_map(|&h| metrics_of(rows.iter().filter(|r| r.hour == h), mre_epsilon).map(|m| (h, m)))
        .collect();

    let conditions = std::iter::once(None).chain(ConditionGroup::ALL.iter().map(|&g| Some(g)));
    let mut grid = Vec::new();
    for condition in conditions {
        for hour in std::iter::once(None).chain(hours.iter().map(|&h| Some(h))) {
            let cell_rows =
                rows.iter().filter(|r| condition.is_none_or(|g| r.condition == g) && hour.is_none_or(|h| r.hour == h));
            grid.push(BreakdownCell { condition, hour, metrics: metrics_of(cell_rows, mre_epsilon) });
        }
    }

    Ok(Breakdown { overall, by_condition, by_hour, grid, mre_cdf: mre_cdf(&relative_errors(rows, mre_epsilon)) })
}

/// `metrics.json`: the overall summary plus per-condition cells.
pub fn write_metrics_json(output: impl Write, breakdown: &Breakdown) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        overall: &'a Metrics,
        by_condition: &'a BTreeMap<ConditionGroup, Option<Metrics>>,
        mre_epsilon: f64,
    }
    let summary = Summary {
        overall: &breakdown.overall,
        by_condition: &breakdown.by_condition,
        mre_epsilon: DEFAULT_MRE_EPSILON,
    };
    let mut output = output;
    serde_json::to_writer_pretty(&mut output, &summary)?;
    output.write_all(b"\n")?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `breakdown.csv`: one row per condition × hour cell, `all` for margins.
pub fn write_breakdown_csv(output: impl Write, breakdown: &Breakdown) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["condition", "hour", "count", "mae", "rmse", "mre", "mre_excluded"])?;
    for cell in &breakdown.grid {
        let condition = cell.condition.map_or("all", ConditionGroup::as_str);
        let hour = cell.hour.map_or_else(|| "all".to_string(), |h| h.to_string());
        match &cell.metrics {
            Some(m) => w.write_record([
                condition.to_string(),
                hour,
                m.count.to_string(),
                m.mae.to_string(),
                m.rmse.to_string(),
                opt(m.mre),
                m.mre_excluded.to_string(),
            ])?,
            None => w.write_record([condition, &hour, "0", "", "", "", "0"])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// `mre_cdf.csv`: `threshold,fraction`.
pub fn write_mre_cdf_csv(output: impl Write, breakdown: &Breakdown) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["threshold", "fraction"])?;
    for (t, f) in &breakdown.mre_cdf {
        w.write_record([format!("{t:.2}"), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Forecast rows as CSV, one per prediction.
pub fn write_forecasts_csv(output: impl Write, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["segment_id", "day", "slot", "hour", "predicted", "observed", "condition"])?;
    for r in rows {
        w.write_record([
            r.segment_id.clone(),
            r.day.to_string(),
            r.slot.to_string(),
            r.hour.to_string(),
            r.predicted.to_string(),
            r.observed.to_string(),
            r.condition.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(p: f64, o: f64, hour: u32) -> ForecastRow {
        ForecastRow::new("s", 1, 0, hour, p, o).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let m = metrics_from_pairs(&[0.5, 2.0], &[0.5, 2.0], DEFAULT_MRE_EPSILON).unwrap();
        assert_eq!((m.mae, m.rmse, m.mre), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn single_row() {
        let m = metrics_from_pairs(&[1.2], &[1.0], DEFAULT_MRE_EPSILON).unwrap();
        assert!((m.mae - 0.2).abs() < 1e-12);
        assert!((m.rmse - 0.2).abs() < 1e-12);
        assert!((m.mre.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_rows() {
        let m = metrics_from_pairs(&[1.0, 1.4], &[1.0, 1.0], DEFAULT_MRE_EPSILON).unwrap();
        assert!((m.mae - 0.2).abs() < 1e-12);
        assert!((m.rmse - 0.08f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_observations_are_excluded_from_mre() {
        let m = metrics_from_pairs(&[0.3, 0.0], &[0.0, 0.0], DEFAULT_MRE_EPSILON).unwrap();
        assert_eq!(m.mre, None);
        assert_eq!(m.mre_excluded, 2);
        assert!((m.mae - 0.15).abs() < 1e-12);
        assert!(metrics_from_pairs(&[], &[], DEFAULT_MRE_EPSILON).is_err());
    }

    #[test]
    fn absent_condition_cells() {
        let rows = vec![row(0.5, 0.4, 7), row(0.1, 0.2, 8)];
        let b = breakdown(&rows, DEFAULT_MRE_EPSILON).unwrap();
        assert!(b.by_condition[&ConditionGroup::Normal].is_some());
        assert!(b.by_condition[&ConditionGroup::Light].is_none());
        assert!(b.by_condition[&ConditionGroup::Heavy].is_none());
        // (all + 3 conditions) × (all + 2 hours)
        assert_eq!(b.grid.len(), 12);
    }

    #[test]
    fn cdf_shape() {
        let cdf = mre_cdf(&[0.0, 0.1, 0.26, 0.4]);
        assert_eq!(cdf.first().unwrap(), &(0.0, 0.25));
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 < w[1].0));
        let wide = mre_cdf(&[0.2, 1e4]);
        assert_eq!(wide.last().unwrap(), &(1e4, 1.0));
        assert!(mre_cdf(&[]).is_empty());
    }

    #[test]
    fn writers_emit_headers() {
        let rows = vec![row(0.5, 0.4, 7), row(2.5, 2.0, 8)];
        let b = breakdown(&rows, DEFAULT_MRE_EPSILON).unwrap();
        let mut buf = Vec::new();
        write_breakdown_csv(&mut buf, &b).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("condition,hour,count,mae,rmse,mre,mre_excluded\nall,all,2,"));
        assert!(text.contains("heavy,all,0,,,,0"));
        let mut buf = Vec::new();
        write_metrics_json(&mut buf, &b).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["overall"]["count"], 2);
    }

    fn arb_rows() -> impl Strategy<Value = Vec<ForecastRow>> {
        // multiples of 1/8 keep every sum exact
        prop::collection::vec((0u32..64, 0u32..64, 6u32..24), 1..80)
            .prop_map(|v| v.into_iter().map(|(p, o, h)| row(p as f64 / 8.0, o as f64 / 8.0, h)).collect())
    }

    proptest! {
        #[test]
        fn rmse_bounds_mae_in_every_cell(rows in arb_rows()) {
            let b = breakdown(&rows, DEFAULT_MRE_EPSILON).unwrap();
            for cell in b.grid.iter().filter_map(|c| c.metrics) {
                prop_assert!(cell.rmse >= cell.mae - 1e-15);
                prop_assert!(cell.mae >= 0.0);
                prop_assert!(cell.mre.is_none_or(|m| m >= 0.0));
            }
        }

        #[test]
        fn permutation_invariant(rows in arb_rows(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = compute_metrics(&rows, DEFAULT_MRE_EPSILON).unwrap();
            let b = compute_metrics(&shuffled, DEFAULT_MRE_EPSILON).unwrap();
            prop_assert_eq!(a.count, b.count);
            prop_assert!((a.mae - b.mae).abs() <= 1e-12);
            prop_assert!((a.rmse - b.rmse).abs() <= 1e-12);
        }

        #[test]
        fn overall_mae_is_weighted_condition_mean(rows in arb_rows()) {
            let b = breakdown(&rows, DEFAULT_MRE_EPSILON).unwrap();
            let weighted: f64 = b.by_condition.values().flatten().map(|m| m.mae * m.count as f64).sum();
            prop_assert!((weighted / b.overall.count as f64 - b.overall.mae).abs() <= 1e-12);
        }
    }
}
