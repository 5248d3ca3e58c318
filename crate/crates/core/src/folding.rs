//! Time-series folding: builds the `(d+1) × 2t` periodic input matrix for a
//! target slot, its multi-step variant, and the one-dimensional inputs used by
//! the vector baselines.
//!
//! Layout of the matrix for target `c[m][n + u - 1]`:
//!
//! * row 0: `c[m][n-t], .., c[m][n-1]` followed by the same values reversed;
//! * row i (1..=d): `c[m-i][n+u-1-t], .., c[m-i][n+u-2+t]`.
//!
//! Column indices below 0 read slot 0 of that row's day, indices past the end
//! of the day read the last slot, and day indices below 0 read day 0. Row 0
//! never reads slot `n` or later of day `m`.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::domain::CongestionSeries;
use crate::error::{Error, Result};

/// Folding window sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldingConfig {
    /// Days of history `d` (rows below the recent row).
    pub days: usize,
    /// Half window `t`: the matrix has `2t` columns.
    pub half_window: usize,
    /// Steps ahead `u`; 1 is one-step-ahead prediction.
    pub horizon: usize,
}

impl Default for FoldingConfig {
    fn default() -> Self {
        Self { days: 9, half_window: 6, horizon: 1 }
    }
}

impl FoldingConfig {
    pub fn new(days: usize, half_window: usize, horizon: usize) -> Result<Self> {
        let cfg = Self { days, half_window, horizon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.half_window == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "folding needs d, t, u >= 1 (got d={}, t={}, u={})",
                self.days, self.half_window, self.horizon
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.days + 1
    }

    pub fn cols(&self) -> usize {
        2 * self.half_window
    }

    pub fn matrix_len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn vector_len(&self) -> usize {
        self.half_window + self.days
    }
}

/// Where an instance comes from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub segment_id: String,
    pub day: usize,
    /// Slot `n`; the target is slot `n + u - 1`.
    pub slot: usize,
}

/// Folded input plus the observed target it predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 is the recent (mirrored) row.
    pub values: Vec<f64>,
    pub target: f64,
    pub origin: Origin,
}

impl InputMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }
}

/// One-dimensional input: recent `t` slots then slot `n + u - 1` of the
/// previous `d` days.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub values: Vec<f64>,
    pub target: f64,
    pub origin: Origin,
}

fn check_position(series: &CongestionSeries, m: usize, n: usize, u: usize) -> Result<usize> {
    let slots = series.slots_per_day();
    if m >= series.days() {
        return Err(Error::Index(format!("day {m} >= {} days", series.days())));
    }
    if m == 0 {
        return Err(Error::Index("day 0 has no history and is never a target".into()));
    }
    if u == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if n >= slots {
        return Err(Error::Index(format!("slot {n} >= {slots} slots per day")));
    }
    if n + u > slots {
        return Err(Error::Index(format!("target slot {} lies past the end of the day ({slots} slots)", n + u - 1)));
    }
    Ok(slots)
}

/// Recent value `k` steps back from slot `n` of day `m` (k >= 1).
#[inline]
fn recent(series: &CongestionSeries, m: usize, n: usize, k: usize) -> f64 {
    if n == 0 {
        // nothing observed yet today: last slot of the previous day
        series.value(m - 1, series.slots_per_day() - 1)
    } else if k > n {
        series.value(m, 0)
    } else {
        series.value(m, n - k)
    }
}

#[inline]
fn historical(series: &CongestionSeries, day: isize, col: isize) -> f64 {
    let last = series.slots_per_day() as isize - 1;
    series.value(day.max(0) as usize, col.clamp(0, last) as usize)
}

/// One-step-ahead folded matrix for target `c[m][n]`.
pub fn build_input_matrix(series: &CongestionSeries, m: usize, n: usize, cfg: &FoldingConfig) -> Result<InputMatrix> {
    build_multistep_matrix(series, m, n, 1, cfg)
}

/// Folded matrix for target `c[m][n + u - 1]`; history rows are centred on
/// the target slot while row 0 still ends at slot `n - 1`.
pub fn build_multistep_matrix(
    series: &CongestionSeries,
    m: usize,
    n: usize,
    u: usize,
    cfg: &FoldingConfig,
) -> Result<InputMatrix> {
    cfg.validate()?;
    check_position(series, m, n, u)?;
    let (d, t) = (cfg.days, cfg.half_window);
    let cols = 2 * t;
    let mut values = Vec::with_capacity((d + 1) * cols);

    for k in (1..=t).rev() {
        values.push(recent(series, m, n, k));
    }
    for j in 0..t {
        values.push(values[t - 1 - j]);
    }

    let first_col = (n + u - 1) as isize - t as isize;
    for i in 1..=d {
        let day = m as isize - i as isize;
        for k in 0..cols {
            values.push(historical(series, day, first_col + k as isize));
        }
    }

    Ok(InputMatrix {
        rows: d + 1,
        cols,
        values,
        target: series.value(m, n + u - 1),
        origin: Origin { segment_id: series.segment_id().to_string(), day: m, slot: n },
    })
}

/// One-dimensional input of length `t + d` using `cfg.horizon`.
pub fn build_vector_1d(series: &CongestionSeries, m: usize, n: usize, cfg: &FoldingConfig) -> Result<InputVector> {
    cfg.validate()?;
    let u = cfg.horizon;
    check_position(series, m, n, u)?;
    let mut values = Vec::with_capacity(cfg.vector_len());
    for k in (1..=cfg.half_window).rev() {
        values.push(recent(series, m, n, k));
    }
    for i in 1..=cfg.days {
        values.push(historical(series, m as isize - i as isize, (n + u - 1) as isize));
    }
    Ok(InputVector {
        values,
        target: series.value(m, n + u - 1),
        origin: Origin { segment_id: series.segment_id().to_string(), day: m, slot: n },
    })
}

/// Flattens oldest day first: rows `d, d-1, .., 1`, then the recent row.
pub fn flatten_matrix(matrix: &InputMatrix) -> Vec<f64> {
    (0..matrix.rows).rev().flat_map(|r| matrix.row(r).iter().copied()).collect()
}

/// Inverse of [`flatten_matrix`]: returns row-major values with row 0 first.
pub fn unflatten(flat: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if flat.len() != rows * cols {
        return Err(Error::Dimension(format!("{} values for a {rows}x{cols} matrix", flat.len())));
    }
    Ok(flat.chunks(cols).rev().flat_map(|r| r.iter().copied()).collect())
}

/// `(m, n)` pairs with `m` in `days` (day 0 excluded) whose target slot
/// `n + u - 1` exists.
pub fn eligible_positions(
    series: &CongestionSeries,
    days: Range<usize>,
    horizon: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let slots = series.slots_per_day();
    let days = days.start.max(1)..days.end.min(series.days());
    let last_n = (slots + 1).saturating_sub(horizon.max(1));
    days.flat_map(move |m| (0..last_n).map(move |n| (m, n)))
}

/// Every eligible matrix instance with a target day in `days`.
pub fn build_matrices(series: &CongestionSeries, days: Range<usize>, cfg: &FoldingConfig) -> Result<Vec<InputMatrix>> {
    eligible_positions(series, days, cfg.horizon)
        .map(|(m, n)| build_multistep_matrix(series, m, n, cfg.horizon, cfg))
        .collect()
}

/// Every eligible 1D instance with a target day in `days`.
pub fn build_vectors(series: &CongestionSeries, days: Range<usize>, cfg: &FoldingConfig) -> Result<Vec<InputVector>> {
    eligible_positions(series, days, cfg.horizon).map(|(m, n)| build_vector_1d(series, m, n, cfg)).collect()
}

/// Dumps instances as `target,f0,..` rows with flattened features.
pub fn write_instances_csv(output: impl Write, matrices: &[InputMatrix]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    let width = matrices.first().map_or(0, |m| m.values.len());
    let mut header = vec!["target".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for m in matrices {
        let mut row = vec![m.target.to_string()];
        row.extend(flatten_matrix(m).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    /// Series whose value encodes its coordinate: `c[i][j] = 1000 i + j`.
    fn tagged(days: usize, slot_minutes: u32) -> CongestionSeries {
        let n = (18 * 60 / slot_minutes) as usize;
        let d0 = NaiveDate::from_ymd_opt(2016, 3, 1).unwrap();
        let dates = (0..days).map(|i| d0 + chrono::Days::new(i as u64)).collect();
        let values = (0..days).flat_map(|i| (0..n).map(move |j| (1000 * i + j) as f64)).collect();
        CongestionSeries::new("seg", slot_minutes, 6, 24, dates, values, None).unwrap()
    }

    fn c(i: usize, j: usize) -> f64 {
        (1000 * i + j) as f64
    }

    #[test]
    fn hand_expanded_small_matrix() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::new(1, 1, 1).unwrap();
        let x = build_input_matrix(&s, 1, 1, &cfg).unwrap();
        assert_eq!(x.values, vec![c(1, 0), c(1, 0), c(0, 0), c(0, 1)]);
        assert_eq!(x.target, c(1, 1));
    }

    #[test]
    fn default_shape_is_10_by_12() {
        let s = tagged(12, 5);
        let x = build_input_matrix(&s, 10, 50, &FoldingConfig::default()).unwrap();
        assert_eq!((x.rows, x.cols, x.values.len()), (10, 12, 120));
    }

    #[test]
    fn left_padding_on_previous_day() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::new(1, 2, 1).unwrap();
        let x = build_input_matrix(&s, 1, 0, &cfg).unwrap();
        assert_eq!(x.row(1), &[c(0, 0), c(0, 0), c(0, 0), c(0, 1)]);
        // slot 0 of the day: recent row comes from the previous day's last slot
        assert_eq!(x.row(0), &[c(0, 215); 4]);
    }

    #[test]
    fn multistep_recentres_history() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::new(1, 1, 1).unwrap();
        let x = build_multistep_matrix(&s, 1, 1, 2, &cfg).unwrap();
        assert_eq!(x.row(1), &[c(0, 1), c(0, 2)]);
        assert_eq!(x.row(0), &[c(1, 0), c(1, 0)]);
        assert_eq!(x.target, c(1, 2));
        assert_eq!(build_multistep_matrix(&s, 1, 7, 1, &cfg).unwrap(), build_input_matrix(&s, 1, 7, &cfg).unwrap());
    }

    #[test]
    fn right_boundary_clamps_to_last_slot() {
        let s = tagged(3, 60);
        let cfg = FoldingConfig::new(1, 3, 1).unwrap();
        let x = build_input_matrix(&s, 2, 17, &cfg).unwrap();
        assert_eq!(x.row(1), &[c(1, 14), c(1, 15), c(1, 16), c(1, 17), c(1, 17), c(1, 17)]);
        assert!(build_multistep_matrix(&s, 2, 17, 2, &cfg).is_err());
    }

    #[test]
    fn top_padding_uses_day_zero() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::new(3, 1, 1).unwrap();
        let x = build_input_matrix(&s, 1, 5, &cfg).unwrap();
        for r in 1..=3 {
            assert_eq!(x.row(r), &[c(0, 4), c(0, 5)]);
        }
    }

    #[test]
    fn vector_1d_example() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::new(1, 2, 1).unwrap();
        let v = build_vector_1d(&s, 1, 2, &cfg).unwrap();
        assert_eq!(v.values, vec![c(1, 0), c(1, 1), c(0, 2)]);
        let v = build_vector_1d(&s, 2, 100, &FoldingConfig::new(9, 6, 1).unwrap()).unwrap();
        assert_eq!(v.values.len(), 15);
    }

    #[test]
    fn flatten_orders_oldest_first() {
        let x = InputMatrix {
            rows: 2,
            cols: 2,
            values: vec![1.0, 2.0, 3.0, 4.0],
            target: 0.0,
            origin: Origin { segment_id: "s".into(), day: 1, slot: 0 },
        };
        assert_eq!(flatten_matrix(&x), vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(unflatten(&flatten_matrix(&x), 2, 2).unwrap(), x.values);
        let s = tagged(12, 5);
        let big = build_input_matrix(&s, 11, 3, &FoldingConfig::default()).unwrap();
        assert_eq!(flatten_matrix(&big).len(), 120);
    }

    #[test]
    fn day_zero_and_out_of_range_are_errors() {
        let s = tagged(3, 5);
        let cfg = FoldingConfig::default();
        assert!(build_input_matrix(&s, 0, 10, &cfg).is_err());
        assert!(build_input_matrix(&s, 3, 10, &cfg).is_err());
        assert!(build_input_matrix(&s, 1, 216, &cfg).is_err());
        assert!(FoldingConfig::new(0, 6, 1).is_err());
    }

    #[test]
    fn instance_count_is_days_minus_one_times_slots() {
        let s = tagged(5, 30);
        let cfg = FoldingConfig::new(2, 2, 1).unwrap();
        assert_eq!(build_matrices(&s, 0..5, &cfg).unwrap().len(), 4 * 36);
        let cfg3 = FoldingConfig::new(2, 2, 3).unwrap();
        assert_eq!(build_matrices(&s, 0..5, &cfg3).unwrap().len(), 4 * 34);
    }

    #[test]
    fn instances_csv_has_target_and_features() {
        let s = tagged(3, 60);
        let cfg = FoldingConfig::new(1, 1, 1).unwrap();
        let xs = build_matrices(&s, 1..2, &cfg).unwrap();
        let mut buf = Vec::new();
        write_instances_csv(&mut buf, &xs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "target,f0,f1,f2,f3");
        assert_eq!(lines.count(), 18);
    }
}
