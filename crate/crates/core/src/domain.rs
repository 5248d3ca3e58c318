//! Core value types: congestion levels, condition groups, the per-segment
//! day × slot grid, and min-max normalization.

use std::fmt;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot sizes (minutes) accepted by the preprocessing pipeline.
pub const SUPPORTED_SLOT_MINUTES: [u32; 5] = [5, 10, 15, 30, 60];

/// Congestion level `max(0, (t - t_base) / t_base)`.
pub fn compute_congestion_level(avg_travel_time: f64, baseline_travel_time: f64) -> Result<f64> {
    if !(baseline_travel_time > 0.0) || !baseline_travel_time.is_finite() {
        return Err(Error::InvalidBaseline(baseline_travel_time));
    }
    if !(avg_travel_time >= 0.0) || !avg_travel_time.is_finite() {
        return Err(Error::Domain(avg_travel_time));
    }
    Ok(((avg_travel_time - baseline_travel_time) / baseline_travel_time).max(0.0))
}

/// Traffic condition groups used for error breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionGroup {
    Normal,
    Light,
    Heavy,
}

impl ConditionGroup {
    pub const ALL: [ConditionGroup; 3] = [Self::Normal, Self::Light, Self::Heavy];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Light => "light",
            Self::Heavy => "heavy",
        }
    }
}

impl fmt::Display for ConditionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `c <= 1` is normal traffic, `1 < c <= 3` light congestion, `c > 3` heavy.
pub fn classify_condition(c: f64) -> Result<ConditionGroup> {
    if !(c >= 0.0) {
        return Err(Error::Domain(c));
    }
    Ok(if c <= 1.0 {
        ConditionGroup::Normal
    } else if c <= 3.0 {
        ConditionGroup::Light
    } else {
        ConditionGroup::Heavy
    })
}

/// Min-max scaling parameters. Fit them on the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max >= min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidNormalization { min, max });
        }
        Ok(Self { min, max })
    }

    /// Fits min/max over `values`.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for &v in values {
            seen = true;
            min = min.min(v);
            max = max.max(v);
        }
        if !seen {
            return Err(Error::Empty("no values to fit normalization".into()));
        }
        Self::new(min, max)
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Scales into `[0, 1]`, clamping out-of-range inputs. A degenerate
    /// range maps everything to 0.
    pub fn normalize(&self, value: f64) -> f64 {
        let span = self.span();
        if span == 0.0 {
            return 0.0;
        }
        ((value - self.min) / span).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.span() + self.min
    }
}

/// Checked (day, slot) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotIndex {
    pub day: usize,
    pub slot: usize,
    pub slots_per_day: usize,
}

impl SlotIndex {
    pub fn new(day: usize, slot: usize, slots_per_day: usize) -> Result<Self> {
        if slots_per_day == 0 {
            return Err(Error::Config("slots_per_day must be positive".into()));
        }
        if slot >= slots_per_day {
            return Err(Error::Index(format!("slot {slot} >= slots per day {slots_per_day}")));
        }
        Ok(Self { day, slot, slots_per_day })
    }

    /// Position in the chronologically concatenated series.
    pub fn linear(&self) -> usize {
        self.day * self.slots_per_day + self.slot
    }
}

/// Number of slots per day for a window and slot width.
pub fn slots_per_day(slot_minutes: u32, start_hour: u32, end_hour: u32) -> Result<usize> {
    if slot_minutes == 0 {
        return Err(Error::Config("slot_minutes must be positive".into()));
    }
    if end_hour <= start_hour || end_hour > 24 {
        return Err(Error::Config(format!("invalid hour window {start_hour}..{end_hour}")));
    }
    let minutes = (end_hour - start_hour) * 60;
    if !minutes.is_multiple_of(slot_minutes) {
        return Err(Error::Config(format!(
            "slot of {slot_minutes} min does not tile the {start_hour}:00-{end_hour}:00 window"
        )));
    }
    Ok((minutes / slot_minutes) as usize)
}

/// Dense day × slot grid of congestion levels for one road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionSeries {
    segment_id: String,
    slot_minutes: u32,
    start_hour: u32,
    end_hour: u32,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    baseline_travel_time: Option<f64>,
}

impl CongestionSeries {
    /// `values` is row-major: `values[day * N + slot]`.
    pub fn new(
        segment_id: impl Into<String>,
        slot_minutes: u32,
        start_hour: u32,
        end_hour: u32,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
        baseline_travel_time: Option<f64>,
    ) -> Result<Self> {
        let n = slots_per_day(slot_minutes, start_hour, end_hour)?;
        if values.len() != dates.len() * n {
            return Err(Error::Dimension(format!("{} values for {} days of {} slots", values.len(), dates.len(), n)));
        }
        if let Some(&bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(bad));
        }
        if let Some(b) = baseline_travel_time {
            if !(b > 0.0) {
                return Err(Error::InvalidBaseline(b));
            }
        }
        Ok(Self {
            segment_id: segment_id.into(),
            slot_minutes,
            start_hour,
            end_hour,
            dates,
            values,
            baseline_travel_time,
        })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn slot_minutes(&self) -> u32 {
        self.slot_minutes
    }

    pub fn start_hour(&self) -> u32 {
        self.start_hour
    }

    pub fn end_hour(&self) -> u32 {
        self.end_hour
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn baseline_travel_time(&self) -> Option<f64> {
        self.baseline_travel_time
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn slots_per_day(&self) -> usize {
        (((self.end_hour - self.start_hour) * 60) / self.slot_minutes) as usize
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn day(&self, day: usize) -> &[f64] {
        let n = self.slots_per_day();
        &self.values[day * n..(day + 1) * n]
    }

    /// Panics when out of range; use [`CongestionSeries::get`] for a checked read.
    #[inline]
    pub fn value(&self, day: usize, slot: usize) -> f64 {
        self.values[day * self.slots_per_day() + slot]
    }

    pub fn get(&self, day: usize, slot: usize) -> Option<f64> {
        let n = self.slots_per_day();
        (day < self.days() && slot < n).then(|| self.values[day * n + slot])
    }

    /// Hour of day at which `slot` starts.
    pub fn hour_of_slot(&self, slot: usize) -> u32 {
        self.start_hour + (slot as u32 * self.slot_minutes) / 60
    }

    /// Copy with every value passed through `f` (results must stay non-negative).
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// Keeps the days in `range`.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.days() || range.start > range.end {
            return Err(Error::Index(format!("day range {range:?} of {} days", self.days())));
        }
        let n = self.slots_per_day();
        Ok(Self {
            dates: self.dates[range.clone()].to_vec(),
            values: self.values[range.start * n..range.end * n].to_vec(),
            ..self.clone()
        })
    }

    /// Merges groups of consecutive slots into `slot_minutes`-wide slots by
    /// averaging. Only valid when the new width is a multiple of the old.
    pub fn coarsen(&self, slot_minutes: u32) -> Result<Self> {
        if !slot_minutes.is_multiple_of(self.slot_minutes) {
            return Err(Error::Config(format!(
                "cannot coarsen {}-minute slots to {slot_minutes} minutes",
                self.slot_minutes
            )));
        }
        let factor = (slot_minutes / self.slot_minutes) as usize;
        let n_new = slots_per_day(slot_minutes, self.start_hour, self.end_hour)?;
        let mut values = Vec::with_capacity(self.days() * n_new);
        for day in 0..self.days() {
            for chunk in self.day(day).chunks(factor) {
                values.push(chunk.iter().sum::<f64>() / factor as f64);
            }
        }
        Self::new(
            self.segment_id.clone(),
            slot_minutes,
            self.start_hour,
            self.end_hour,
            self.dates.clone(),
            values,
            self.baseline_travel_time,
        )
    }

    /// Fraction of slots with `c > 1`.
    pub fn congested_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&c| c > 1.0).count() as f64 / self.values.len() as f64
    }
}

/// Chronological day split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
}

impl Default for Splits {
    fn default() -> Self {
        Self { train_days: 20, validation_days: 5, test_days: 5 }
    }
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train_days + self.validation_days + self.test_days
    }

    /// Train, validation and test day ranges for a series of `days` days.
    pub fn ranges(&self, days: usize) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
        if self.train_days < 2 {
            return Err(Error::Config("need at least 2 training days".into()));
        }
        if days < self.total() {
            return Err(Error::Config(format!("series has {days} days, splits need {}", self.total())));
        }
        let a = self.train_days;
        let b = a + self.validation_days;
        Ok((0..a, a..b, b..self.total()))
    }
}

/// Light-traffic window used to estimate the free-flow travel time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineWindow {
    pub start_hour: f64,
    pub end_hour: f64,
}

impl Default for BaselineWindow {
    fn default() -> Self {
        Self { start_hour: 22.0, end_hour: 24.0 }
    }
}

/// Median of the per-slot average travel times whose slot starts inside the
/// light-traffic window; 5th percentile of all slot averages when the window
/// holds none.
///
/// `slot_averages` holds `(hour_of_day, average_travel_time_s)` pairs.
pub fn estimate_baseline_travel_time(slot_averages: &[(f64, f64)], window: BaselineWindow) -> Result<f64> {
    let mut in_window: Vec<f64> = slot_averages
        .iter()
        .filter(|(h, _)| *h >= window.start_hour && *h < window.end_hour)
        .map(|&(_, t)| t)
        .collect();
    let baseline = if !in_window.is_empty() {
        quantile(&mut in_window, 0.5)
    } else {
        let mut all: Vec<f64> = slot_averages.iter().map(|&(_, t)| t).collect();
        if all.is_empty() {
            return Err(Error::Empty("no slot averages for baseline estimation".into()));
        }
        quantile(&mut all, 0.05)
    };
    if !(baseline > 0.0) {
        return Err(Error::InvalidBaseline(baseline));
    }
    Ok(baseline)
}

/// Linear-interpolation quantile (sorts `values` in place).
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}
