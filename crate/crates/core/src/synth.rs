//! Seedable synthetic congestion series: a daily profile of Gaussian rush-hour
//! bumps scaled by an AR(1) day amplitude, AR(1) slot noise, and rare
//! incidents that decay exponentially.

use std::io::Write;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{slots_per_day, CongestionSeries, Splits};
use crate::error::{Error, Result};
use crate::ingest::write_series_csv;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center_hour: f64,
    /// Standard deviation of the bump, in hours.
    pub width_hours: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub segments: usize,
    pub days: usize,
    pub slot_minutes: u32,
    pub start_hour: u32,
    pub end_hour: u32,
    pub start_date: NaiveDate,
    /// Off-peak level; scaled by the day amplitude like the peaks.
    pub base_level: f64,
    pub peaks: Vec<Peak>,
    /// AR(1) coefficient of the day amplitude around 1.
    pub day_ar: f64,
    /// Stationary standard deviation of the day amplitude.
    pub day_sigma: f64,
    /// Standard deviation of the daily shift of all peaks.
    pub peak_jitter_minutes: f64,
    pub noise_sigma: f64,
    /// Slot-to-slot AR(1) coefficient of the noise.
    pub noise_ar: f64,
    /// Expected incidents per day.
    pub incident_rate: f64,
    pub incident_magnitude: f64,
    pub incident_decay_minutes: f64,
    /// Generate calendar days including weekends (scaled by `weekend_scale`)
    /// instead of workdays only.
    pub include_weekends: bool,
    pub weekend_scale: f64,
    /// Per-segment amplitude multiplier drawn from `1 ± segment_spread`.
    pub segment_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            segments: 1,
            days: 30,
            slot_minutes: 5,
            start_hour: 6,
            end_hour: 24,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            base_level: 0.35,
            peaks: vec![
                Peak { center_hour: 8.25, width_hours: 1.0, amplitude: 2.6 },
                Peak { center_hour: 17.5, width_hours: 1.0, amplitude: 2.3 },
            ],
            day_ar: 0.8,
            day_sigma: 0.15,
            peak_jitter_minutes: 10.0,
            noise_sigma: 0.15,
            noise_ar: 0.5,
            incident_rate: 0.1,
            incident_magnitude: 2.5,
            incident_decay_minutes: 30.0,
            include_weekends: false,
            weekend_scale: 0.4,
            segment_spread: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<usize> {
        let n = slots_per_day(self.slot_minutes, self.start_hour, self.end_hour)?;
        let non_negative = [
            self.base_level,
            self.day_sigma,
            self.peak_jitter_minutes,
            self.noise_sigma,
            self.incident_rate,
            self.incident_magnitude,
            self.weekend_scale,
            self.segment_spread,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("synthetic levels, rates and sigmas must be finite and >= 0".into()));
        }
        if self.peaks.iter().any(|p| !(p.amplitude >= 0.0) || !(p.width_hours > 0.0)) {
            return Err(Error::Config("peak amplitudes must be >= 0 and widths > 0".into()));
        }
        for (name, v) in [("day_ar", self.day_ar), ("noise_ar", self.noise_ar)] {
            if !(v > -1.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (-1, 1)")));
            }
        }
        if !(self.incident_decay_minutes > 0.0) || self.segment_spread >= 1.0 {
            return Err(Error::Config("incident decay must be > 0 and segment_spread < 1".into()));
        }
        if self.days == 0 || self.segments == 0 {
            return Err(Error::Config("need at least one day and one segment".into()));
        }
        Ok(n)
    }

    fn dates(&self) -> Vec<NaiveDate> {
        let mut dates = Vec::with_capacity(self.days);
        let mut d = self.start_date;
        while dates.len() < self.days {
            if self.include_weekends || !is_weekend(d) {
                dates.push(d);
            }
            d = d + Days::new(1);
        }
        dates
    }
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

fn segment_seed(seed: u64, segment: usize) -> u64 {
    let mut z = seed ^ (segment as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn segment_name(i: usize) -> String {
    format!("seg-{i:03}")
}

/// Generates `cfg.segments` series. Each segment draws from its own stream,
/// so adding segments leaves earlier ones unchanged.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<CongestionSeries>> {
    (0..cfg.segments).map(|i| generate_segment(cfg, i)).collect()
}

pub fn generate_segment(cfg: &SynthConfig, segment: usize) -> Result<CongestionSeries> {
    let n = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(segment_seed(cfg.seed, segment));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dates = cfg.dates();
    let scale = if cfg.segment_spread > 0.0 {
        rng.random_range(1.0 - cfg.segment_spread..=1.0 + cfg.segment_spread)
    } else {
        1.0
    };
    let slot_h = cfg.slot_minutes as f64 / 60.0;
    let day_innovation = cfg.day_sigma * (1.0 - cfg.day_ar * cfg.day_ar).sqrt();
    let noise_innovation = cfg.noise_sigma * (1.0 - cfg.noise_ar * cfg.noise_ar).sqrt();
    let decay_slots = cfg.incident_decay_minutes / cfg.slot_minutes as f64;
    let poisson = (cfg.incident_rate > 0.0).then(|| Poisson::new(cfg.incident_rate).expect("positive rate"));

    let mut values = Vec::with_capacity(dates.len() * n);
    let mut drift = cfg.day_sigma * std_normal.sample(&mut rng);
    for (day, date) in dates.iter().enumerate() {
        if day > 0 {
            drift = cfg.day_ar * drift + day_innovation * std_normal.sample(&mut rng);
        }
        let mut amplitude = (1.0 + drift).max(0.0) * scale;
        if is_weekend(*date) {
            amplitude *= cfg.weekend_scale;
        }
        let shift_h = cfg.peak_jitter_minutes / 60.0 * std_normal.sample(&mut rng);

        let mut incident = vec![0.0; n];
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..count {
            let at = rng.random_range(0..n);
            let size = cfg.incident_magnitude * rng.random_range(0.5..1.5);
            for (j, v) in incident.iter_mut().enumerate().skip(at) {
                *v += size * (-((j - at) as f64) / decay_slots).exp();
            }
        }

        let mut noise = cfg.noise_sigma * std_normal.sample(&mut rng);
        for (j, inc) in incident.iter().enumerate() {
            if j > 0 {
                noise = cfg.noise_ar * noise + noise_innovation * std_normal.sample(&mut rng);
            }
            // slot midpoint
            let hour = cfg.start_hour as f64 + (j as f64 + 0.5) * slot_h;
            let profile = cfg.base_level
                + cfg
                    .peaks
                    .iter()
                    .map(|p| {
                        let z = (hour - p.center_hour - shift_h) / p.width_hours;
                        p.amplitude * (-0.5 * z * z).exp()
                    })
                    .sum::<f64>();
            values.push((profile * amplitude + noise + inc).max(0.0));
        }
    }
    CongestionSeries::new(segment_name(segment), cfg.slot_minutes, cfg.start_hour, cfg.end_hour, dates, values, None)
}

/// Generated series plus the splits they are meant to be used with.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: SynthConfig,
    pub splits: Splits,
    pub series: Vec<CongestionSeries>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a SynthConfig,
    splits: &'a Splits,
    segments: Vec<SegmentSummary<'a>>,
}

#[derive(Serialize)]
struct SegmentSummary<'a> {
    segment_id: &'a str,
    values: usize,
    congested_fraction: f64,
}

impl Benchmark {
    pub fn write_csv(&self, output: impl Write) -> Result<()> {
        write_series_csv(output, &self.series)
    }

    /// JSON record of the generating config and per-segment summaries.
    pub fn write_sidecar(&self, output: impl Write) -> Result<()> {
        let sidecar = Sidecar {
            config: &self.config,
            splits: &self.splits,
            segments: self
                .series
                .iter()
                .map(|s| SegmentSummary {
                    segment_id: s.segment_id(),
                    values: s.values().len(),
                    congested_fraction: s.congested_fraction(),
                })
                .collect(),
        };
        let mut output = output;
        serde_json::to_writer_pretty(&mut output, &sidecar)?;
        output.write_all(b"\n")?;
        Ok(())
    }
}

/// Series for the standard 20/5/5-day split.
pub fn make_benchmark(cfg: &SynthConfig) -> Result<Benchmark> {
    let splits = Splits::default();
    if cfg.days < splits.total() {
        return Err(Error::Config(format!("benchmark needs {} days, config has {}", splits.total(), cfg.days)));
    }
    Ok(Benchmark { config: cfg.clone(), splits, series: generate(cfg)? })
}

/// One benchmark per (noise level, seed) pair, noise-major.
pub fn benchmark_grid(cfg: &SynthConfig, noise_levels: &[f64], seeds: &[u64]) -> Result<Vec<Benchmark>> {
    let mut out = Vec::with_capacity(noise_levels.len() * seeds.len());
    for &noise_sigma in noise_levels {
        for &seed in seeds {
            out.push(make_benchmark(&SynthConfig { noise_sigma, seed, ..cfg.clone() })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise_sigma: 0.0,
            day_sigma: 0.0,
            peak_jitter_minutes: 0.0,
            incident_rate: 0.0,
            day_ar: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn quiet_days_repeat_exactly() {
        let s = generate_segment(&quiet(), 0).unwrap();
        for d in 1..s.days() {
            assert_eq!(s.day(d), s.day(0));
        }
    }

    #[test]
    fn zero_amplitudes_give_zeros() {
        let mut cfg = quiet();
        cfg.base_level = 0.0;
        cfg.peaks.iter_mut().for_each(|p| p.amplitude = 0.0);
        let s = generate_segment(&cfg, 0).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_calendar() {
        let s = generate_segment(&SynthConfig::default(), 0).unwrap();
        assert_eq!(s.values().len(), 6480);
        assert_eq!(s.slots_per_day(), 216);
        assert!(s.dates().iter().all(|d| !is_weekend(*d)));
        assert!(s.values().iter().all(|&v| v >= 0.0));
        let wk = generate_segment(&SynthConfig { include_weekends: true, ..Default::default() }, 0).unwrap();
        assert!(wk.dates().iter().any(|d| is_weekend(*d)));
    }

    #[test]
    fn default_congested_fraction_in_band() {
        for seed in 0..4 {
            let s = generate_segment(&SynthConfig { seed, ..Default::default() }, 0).unwrap();
            let f = s.congested_fraction();
            assert!((0.25..=0.45).contains(&f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig { segments: 2, ..Default::default() };
        let write = || {
            let mut buf = Vec::new();
            make_benchmark(&cfg).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(write(), write());
        let other = generate(&SynthConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(other[0], generate(&SynthConfig::default()).unwrap()[0]);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn adjacent_days_are_more_alike_than_a_week_apart() {
        let cfg = SynthConfig { days: 400, ..Default::default() };
        let s = generate_segment(&cfg, 0).unwrap();
        let means: Vec<f64> = (0..s.days()).map(|d| s.day(d).iter().sum::<f64>() / s.slots_per_day() as f64).collect();
        let lag = |k: usize| correlation(&means[..means.len() - k], &means[k..]);
        assert!(lag(1) > lag(7), "lag1 {} lag7 {}", lag(1), lag(7));
    }

    #[test]
    fn daily_autocorrelation_without_noise() {
        let cfg = SynthConfig { noise_sigma: 0.0, incident_rate: 0.0, peak_jitter_minutes: 0.0, ..Default::default() };
        let s = generate_segment(&cfg, 0).unwrap();
        let n = s.slots_per_day();
        let v = s.values();
        assert!(correlation(&v[..v.len() - n], &v[n..]) > 0.95);
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { day_ar: 1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise_sigma: -0.1, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { slot_minutes: 7, ..Default::default() }.validate().is_err());
        assert!(make_benchmark(&SynthConfig { days: 10, ..Default::default() }).is_err());
    }

    #[test]
    fn grid_is_noise_major() {
        let g = benchmark_grid(&SynthConfig { days: 30, ..Default::default() }, &[0.0, 0.3], &[1, 2]).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!((g[1].config.noise_sigma, g[1].config.seed), (0.0, 2));
        assert_eq!((g[2].config.noise_sigma, g[2].config.seed), (0.3, 1));
    }
}
