//! Preprocessing of raw vehicle passages and pre-aggregated travel times into
//! per-segment congestion series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::domain::{
    compute_congestion_level, estimate_baseline_travel_time, slots_per_day, BaselineWindow, CongestionSeries,
    SUPPORTED_SLOT_MINUTES,
};
use crate::error::{Error, Result};

/// One camera sighting of a vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub vehicle_id: String,
    pub camera_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
}

/// A vehicle moving between two consecutive cameras.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTraversal {
    pub segment_id: String,
    pub enter_ts: i64,
    pub exit_ts: i64,
}

impl SegmentTraversal {
    pub fn travel_time(&self) -> i64 {
        self.exit_ts - self.enter_ts
    }
}

/// Segment id for the ordered camera pair `from -> to`.
pub fn segment_id_for(from: &str, to: &str) -> String {
    format!("{from}->{to}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairingStats {
    pub traversals: usize,
    /// Consecutive pairs dropped (same camera, zero duration, or gap too long).
    pub dropped: usize,
}

/// Pairs consecutive sightings of each vehicle at distinct cameras that are at
/// most `max_gap` seconds apart.
pub fn pair_traversals(records: &[PassageRecord], max_gap: i64) -> (Vec<SegmentTraversal>, PairingStats) {
    let mut sorted: Vec<&PassageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.vehicle_id.as_str(), a.timestamp, a.camera_id.as_str()).cmp(&(
            b.vehicle_id.as_str(),
            b.timestamp,
            b.camera_id.as_str(),
        ))
    });

    let mut out = Vec::new();
    let mut stats = PairingStats::default();
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.vehicle_id != b.vehicle_id {
            continue;
        }
        let gap = b.timestamp - a.timestamp;
        if a.camera_id == b.camera_id || gap <= 0 || gap > max_gap {
            stats.dropped += 1;
            continue;
        }
        out.push(SegmentTraversal {
            segment_id: segment_id_for(&a.camera_id, &b.camera_id),
            enter_ts: a.timestamp,
            exit_ts: b.timestamp,
        });
    }
    stats.traversals = out.len();
    (out, stats)
}

/// Window, slot width and day filter applied during aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub slot_minutes: u32,
    pub start_hour: u32,
    pub end_hour: u32,
    pub workdays_only: bool,
    /// Offset applied to UTC timestamps before assigning day and slot.
    pub utc_offset_minutes: i32,
    pub baseline_window: BaselineWindow,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            slot_minutes: 5,
            start_hour: 6,
            end_hour: 24,
            workdays_only: true,
            utc_offset_minutes: 0,
            baseline_window: BaselineWindow::default(),
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<usize> {
        if !SUPPORTED_SLOT_MINUTES.contains(&self.slot_minutes) {
            return Err(Error::Config(format!(
                "slot_minutes {} not in {:?}",
                self.slot_minutes, SUPPORTED_SLOT_MINUTES
            )));
        }
        slots_per_day(self.slot_minutes, self.start_hour, self.end_hour)
    }

    /// Maps a UTC timestamp to its kept (date, slot), or `None` when it falls
    /// outside the window or on a filtered day.
    pub fn locate(&self, timestamp: i64) -> Option<(NaiveDate, usize)> {
        let local = DateTime::from_timestamp(timestamp + self.utc_offset_minutes as i64 * 60, 0)?.naive_utc();
        self.locate_naive(local)
    }

    fn locate_naive(&self, local: NaiveDateTime) -> Option<(NaiveDate, usize)> {
        let date = local.date();
        if self.workdays_only && !is_workday(date) {
            return None;
        }
        let minute = local.hour() * 60 + local.minute();
        let (lo, hi) = (self.start_hour * 60, self.end_hour * 60);
        if minute < lo || minute >= hi {
            return None;
        }
        Some((date, ((minute - lo) / self.slot_minutes) as usize))
    }

    fn slot_hour(&self, slot: usize) -> f64 {
        self.start_hour as f64 + (slot as f64 * self.slot_minutes as f64) / 60.0
    }
}

/// Monday to Friday; no holiday calendar.
pub fn is_workday(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Pre-aggregated average travel time for one (segment, date, slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRow {
    pub segment_id: String,
    pub date: NaiveDate,
    pub slot_index: usize,
    pub avg_travel_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AggregationOutput {
    pub series: Vec<CongestionSeries>,
    pub warnings: Vec<String>,
}

/// Per-bucket accumulator. Integer sums keep traversal aggregation exact and
/// independent of record order.
#[derive(Debug, Default, Clone)]
struct Bucket {
    int_sum: i64,
    float_values: Vec<f64>,
    count: usize,
}

impl Bucket {
    fn mean(&mut self) -> f64 {
        if self.float_values.is_empty() {
            self.int_sum as f64 / self.count as f64
        } else {
            self.float_values.sort_by(f64::total_cmp);
            self.float_values.iter().sum::<f64>() / self.count as f64
        }
    }
}

type Buckets = BTreeMap<String, BTreeMap<(NaiveDate, usize), Bucket>>;

/// Averages traversal travel times per (segment, day, slot) using exit time,
/// fills empty slots, and converts to congestion levels.
pub fn aggregate_traversals(traversals: &[SegmentTraversal], cfg: &AggregationConfig) -> Result<AggregationOutput> {
    cfg.validate()?;
    let mut buckets: Buckets = BTreeMap::new();
    let mut seen_segments = BTreeSet::new();
    for tr in traversals {
        seen_segments.insert(tr.segment_id.clone());
        if tr.travel_time() <= 0 {
            continue;
        }
        if let Some(key) = cfg.locate(tr.exit_ts) {
            let b = buckets.entry(tr.segment_id.clone()).or_default().entry(key).or_default();
            b.int_sum += tr.travel_time();
            b.count += 1;
        }
    }
    finish(buckets, seen_segments, cfg)
}

/// Same as [`aggregate_traversals`] for rows that already carry slot averages.
pub fn aggregate_rows(rows: &[AggregatedRow], cfg: &AggregationConfig) -> Result<AggregationOutput> {
    let n = cfg.validate()?;
    let mut buckets: Buckets = BTreeMap::new();
    let mut seen_segments = BTreeSet::new();
    for row in rows {
        seen_segments.insert(row.segment_id.clone());
        if row.slot_index >= n {
            return Err(Error::Index(format!(
                "slot_index {} >= {} slots per day for segment {}",
                row.slot_index, n, row.segment_id
            )));
        }
        if !(row.avg_travel_time_s > 0.0) || !row.avg_travel_time_s.is_finite() {
            continue;
        }
        if cfg.workdays_only && !is_workday(row.date) {
            continue;
        }
        let b = buckets.entry(row.segment_id.clone()).or_default().entry((row.date, row.slot_index)).or_default();
        b.float_values.push(row.avg_travel_time_s);
        b.count += 1;
    }
    finish(buckets, seen_segments, cfg)
}

fn finish(mut buckets: Buckets, seen_segments: BTreeSet<String>, cfg: &AggregationConfig) -> Result<AggregationOutput> {
    let n = cfg.validate()?;
    let dates: Vec<NaiveDate> =
        buckets.values().flat_map(|m| m.keys().map(|(d, _)| *d)).collect::<BTreeSet<_>>().into_iter().collect();

    let mut out = AggregationOutput::default();
    for segment in &seen_segments {
        let Some(segment_buckets) = buckets.get_mut(segment) else {
            let msg = format!("segment {segment}: no traversals inside the kept window, skipped");
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        };

        let mut grid: Vec<Option<f64>> = vec![None; dates.len() * n];
        let mut observed = Vec::with_capacity(segment_buckets.len());
        for ((date, slot), bucket) in segment_buckets.iter_mut() {
            let day = dates.binary_search(date).expect("date collected above");
            let mean = bucket.mean();
            grid[day * n + slot] = Some(mean);
            observed.push((cfg.slot_hour(*slot), mean));
        }

        let baseline = estimate_baseline_travel_time(&observed, cfg.baseline_window)?;
        let travel_times = fill_gaps(&grid, dates.len(), n);
        let values = travel_times.iter().map(|&t| compute_congestion_level(t, baseline)).collect::<Result<Vec<_>>>()?;
        out.series.push(CongestionSeries::new(
            segment.clone(),
            cfg.slot_minutes,
            cfg.start_hour,
            cfg.end_hour,
            dates.clone(),
            values,
            Some(baseline),
        )?);
    }
    Ok(out)
}

/// Linear interpolation inside each day, nearest observed value at the day
/// edges. A day with no observations takes the per-slot mean of the other
/// (filled) days.
pub(crate) fn fill_gaps(grid: &[Option<f64>], days: usize, n: usize) -> Vec<f64> {
    let mut filled: Vec<Option<Vec<f64>>> = Vec::with_capacity(days);
    for day in 0..days {
        let row = &grid[day * n..(day + 1) * n];
        let known: Vec<(usize, f64)> = row.iter().enumerate().filter_map(|(j, v)| v.map(|v| (j, v))).collect();
        if known.is_empty() {
            filled.push(None);
            continue;
        }
        let mut vals = vec![0.0; n];
        for (j, slot) in vals.iter_mut().enumerate() {
            let right = known.partition_point(|&(k, _)| k < j);
            *slot = match (right.checked_sub(1).map(|i| known[i]), known.get(right)) {
                (_, Some(&(k, v))) if k == j => v,
                (Some((k0, v0)), Some(&(k1, v1))) => v0 + (v1 - v0) * (j - k0) as f64 / (k1 - k0) as f64,
                (Some((_, v0)), None) => v0,
                (None, Some(&(_, v1))) => v1,
                (None, None) => unreachable!("known is non-empty"),
            };
        }
        filled.push(Some(vals));
    }

    let complete: Vec<&Vec<f64>> = filled.iter().flatten().collect();
    let slot_means: Vec<f64> =
        (0..n).map(|j| complete.iter().map(|r| r[j]).sum::<f64>() / complete.len().max(1) as f64).collect();
    filled.into_iter().flat_map(|row| row.unwrap_or_else(|| slot_means.clone())).collect()
}

/// Parses `timestamp_utc` as epoch seconds or an ISO-8601 timestamp (naive
/// timestamps are read as UTC).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Parsed rows plus the number of malformed rows skipped in lenient mode.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub skipped: usize,
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_rows<T, R: Read>(
    input: R,
    header: &[&str],
    strict: bool,
    mut parse: impl FnMut(&csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, header)?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for record in reader.records() {
        let parsed = match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != header.len() {
                    Err((line, format!("expected {} fields, found {}", header.len(), rec.len())))
                } else {
                    parse(&rec).map_err(|m| (line, m))
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                Err((line, e.to_string()))
            }
        };
        match parsed {
            Ok(row) => rows.push(row),
            Err((line, message)) if strict => return Err(Error::Parse { line, message }),
            Err((line, message)) => {
                log::warn!("skipping line {line}: {message}");
                skipped += 1;
            }
        }
    }
    Ok(Parsed { rows, skipped })
}

pub const PASSAGE_HEADER: [&str; 3] = ["vehicle_id", "camera_id", "timestamp_utc"];
pub const AGGREGATED_HEADER: [&str; 4] = ["segment_id", "date", "slot_index", "avg_travel_time_s"];
pub const SERIES_HEADER: [&str; 4] = ["segment_id", "date", "slot_index", "congestion_level"];

pub fn read_passage_csv(input: impl Read, strict: bool) -> Result<Parsed<PassageRecord>> {
    parse_rows(input, &PASSAGE_HEADER, strict, |rec| {
        let timestamp =
            parse_timestamp(&rec[2]).filter(|&t| t > 0).ok_or_else(|| format!("malformed timestamp {:?}", &rec[2]))?;
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err("empty vehicle or camera id".into());
        }
        Ok(PassageRecord { vehicle_id: rec[0].to_string(), camera_id: rec[1].to_string(), timestamp })
    })
}

fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| format!("malformed date {raw:?}: {e}"))
}

pub fn read_aggregated_csv(input: impl Read, strict: bool) -> Result<Parsed<AggregatedRow>> {
    parse_rows(input, &AGGREGATED_HEADER, strict, |rec| {
        Ok(AggregatedRow {
            segment_id: rec[0].to_string(),
            date: parse_date(&rec[1])?,
            slot_index: rec[2].parse().map_err(|_| format!("malformed slot_index {:?}", &rec[2]))?,
            avg_travel_time_s: rec[3].parse().map_err(|_| format!("malformed travel time {:?}", &rec[3]))?,
        })
    })
}

/// Writes series in `segment_id,date,slot_index,congestion_level` form.
pub fn write_series_csv(output: impl Write, series: &[CongestionSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(SERIES_HEADER)?;
    for s in series {
        for (day, date) in s.dates().iter().enumerate() {
            let date = date.format("%Y-%m-%d").to_string();
            for (slot, v) in s.day(day).iter().enumerate() {
                w.write_record([s.segment_id(), &date, &slot.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a series CSV back into per-segment grids. Slot width and window are
/// not stored in the file, so the caller supplies them.
pub fn read_series_csv(
    input: impl Read,
    slot_minutes: u32,
    start_hour: u32,
    end_hour: u32,
) -> Result<Vec<CongestionSeries>> {
    let n = slots_per_day(slot_minutes, start_hour, end_hour)?;
    let parsed = parse_rows(input, &SERIES_HEADER, true, |rec| {
        let slot: usize = rec[2].parse().map_err(|_| format!("malformed slot_index {:?}", &rec[2]))?;
        let value: f64 = rec[3].parse().map_err(|_| format!("malformed congestion level {:?}", &rec[3]))?;
        Ok((rec[0].to_string(), parse_date(&rec[1])?, slot, value))
    })?;

    let mut by_segment: BTreeMap<String, BTreeMap<NaiveDate, Vec<Option<f64>>>> = BTreeMap::new();
    for (segment, date, slot, value) in parsed.rows {
        if slot >= n {
            return Err(Error::Index(format!("slot_index {slot} >= {n} slots per day ({slot_minutes}-minute slots)")));
        }
        let day = by_segment.entry(segment).or_default().entry(date).or_insert_with(|| vec![None; n]);
        day[slot] = Some(value);
    }

    by_segment
        .into_iter()
        .map(|(segment, days)| {
            let dates: Vec<NaiveDate> = days.keys().copied().collect();
            let mut values = Vec::with_capacity(dates.len() * n);
            for (date, row) in days {
                for (slot, v) in row.into_iter().enumerate() {
                    values.push(
                        v.ok_or_else(|| Error::Dimension(format!("segment {segment} missing {date} slot {slot}")))?,
                    );
                }
            }
            CongestionSeries::new(segment, slot_minutes, start_hour, end_hour, dates, values, None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: &str, c: &str, t: i64) -> PassageRecord {
        PassageRecord { vehicle_id: v.into(), camera_id: c.into(), timestamp: t }
    }

    #[test]
    fn pairing_examples() {
        let (t, _) = pair_traversals(&[rec("A", "cam1", 1), rec("A", "cam2", 101)], 600);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].travel_time(), 100);
        assert_eq!(t[0].segment_id, "cam1->cam2");

        let (t, stats) = pair_traversals(&[rec("A", "cam1", 1), rec("A", "cam2", 10001)], 600);
        assert!(t.is_empty());
        assert_eq!(stats.dropped, 1);

        let (t, stats) = pair_traversals(&[], 600);
        assert!(t.is_empty());
        assert_eq!(stats, PairingStats::default());
    }

    #[test]
    fn pairing_ignores_vehicle_interleaving() {
        let recs = vec![
            rec("B", "cam2", 50),
            rec("A", "cam2", 160),
            rec("B", "cam1", 10),
            rec("A", "cam1", 100),
            rec("A", "cam3", 200),
        ];
        let (t, _) = pair_traversals(&recs, 600);
        let ids: Vec<_> = t.iter().map(|x| (x.segment_id.as_str(), x.travel_time())).collect();
        assert_eq!(ids, vec![("cam1->cam2", 60), ("cam2->cam3", 40), ("cam1->cam2", 40)]);
    }

    #[test]
    fn gap_fill_interpolates_and_carries_edges() {
        let grid = vec![None, Some(2.0), None, Some(4.0), None, None, None, None, None, None];
        let filled = fill_gaps(&grid, 2, 5);
        assert_eq!(&filled[..5], &[2.0, 2.0, 3.0, 4.0, 4.0]);
        // empty day falls back to the per-slot mean of the other days
        assert_eq!(&filled[5..], &[2.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn timestamps_parse_in_both_forms() {
        assert_eq!(parse_timestamp("1456819200"), Some(1456819200));
        assert_eq!(parse_timestamp("2016-03-01T08:00:00Z"), Some(1456819200));
        assert_eq!(parse_timestamp("2016-03-01 08:00:00"), Some(1456819200));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn locate_respects_window_and_weekends() {
        let cfg = AggregationConfig::default();
        // 2016-03-01 was a Tuesday
        let tue_0805 = parse_timestamp("2016-03-01T08:05:00Z").unwrap();
        let (date, slot) = cfg.locate(tue_0805).unwrap();
        assert_eq!(date, NaiveDate::from_ymd_opt(2016, 3, 1).unwrap());
        assert_eq!(slot, 25);
        assert!(cfg.locate(parse_timestamp("2016-03-01T05:59:59Z").unwrap()).is_none());
        assert!(cfg.locate(parse_timestamp("2016-03-05T08:00:00Z").unwrap()).is_none());
        let all_days = AggregationConfig { workdays_only: false, ..cfg };
        assert!(all_days.locate(parse_timestamp("2016-03-05T08:00:00Z").unwrap()).is_some());
    }

    #[test]
    fn strict_parse_reports_line_number() {
        let csv = "vehicle_id,camera_id,timestamp_utc\nA,c1,100\nA,c2,notatime\n";
        match read_passage_csv(csv.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let lenient = read_passage_csv(csv.as_bytes(), false).unwrap();
        assert_eq!(lenient.rows.len(), 1);
        assert_eq!(lenient.skipped, 1);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let csv = "vehicle,camera,ts\nA,c1,100\n";
        assert!(matches!(read_passage_csv(csv.as_bytes(), false), Err(Error::Parse { line: 1, .. })));
    }
}
