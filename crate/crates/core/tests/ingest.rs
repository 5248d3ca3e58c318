use chrono::{NaiveDate, NaiveTime};
use pcnn_core::ingest::{aggregate_traversals, AggregationConfig, SegmentTraversal};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FREE_FLOW: i64 = 100;

fn ts(date: NaiveDate, seconds_after_six: i64) -> i64 {
    date.and_time(NaiveTime::from_hms_opt(6, 0, 0).unwrap()).and_utc().timestamp() + seconds_after_six
}

/// Three workdays, two segments, at least one traversal in every 5-minute
/// slot. Travel times never drop below the free-flow time, which is exactly
/// what the 22:00-24:00 slots see, so levels map back to travel times.
fn traversals(seed: u64) -> Vec<SegmentTraversal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = [4, 5, 6].map(|d| NaiveDate::from_ymd_opt(2024, 3, d).unwrap());
    let mut out = Vec::new();
    for segment in ["a->b", "b->c"] {
        for &date in &dates {
            for slot in 0..216i64 {
                let late = slot >= 192;
                for _ in 0..rng.random_range(1..4) {
                    let exit = ts(date, slot * 300 + rng.random_range(0..300));
                    let travel = if late { FREE_FLOW } else { FREE_FLOW + rng.random_range(0..400) };
                    out.push(SegmentTraversal { segment_id: segment.into(), enter_ts: exit - travel, exit_ts: exit });
                }
            }
        }
    }
    out
}

fn config(slot_minutes: u32) -> AggregationConfig {
    AggregationConfig { slot_minutes, ..Default::default() }
}

#[test]
fn every_segment_gets_a_full_grid_for_every_slot_size() {
    let tr = traversals(1);
    for minutes in [5, 10, 15, 30, 60] {
        let out = aggregate_traversals(&tr, &config(minutes)).unwrap();
        assert_eq!(out.series.len(), 2);
        for s in &out.series {
            let n = (18 * 60 / minutes) as usize;
            assert_eq!(s.slots_per_day(), n);
            assert_eq!(s.values().len(), 3 * n);
            assert!(s.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

#[test]
fn ten_minute_slots_are_traversal_weighted_means_of_five_minute_slots() {
    let tr = traversals(2);
    let five = aggregate_traversals(&tr, &config(5)).unwrap();
    let ten = aggregate_traversals(&tr, &config(10)).unwrap();
    let counts = |segment: &str, day: usize, slot: usize| {
        let date = NaiveDate::from_ymd_opt(2024, 3, 4 + day as u32).unwrap();
        let start = ts(date, slot as i64 * 300);
        tr.iter().filter(|t| t.segment_id == segment && t.exit_ts >= start && t.exit_ts < start + 300).count() as f64
    };
    for (s5, s10) in five.series.iter().zip(&ten.series) {
        assert_eq!(s5.baseline_travel_time(), Some(FREE_FLOW as f64));
        assert_eq!(s10.baseline_travel_time(), Some(FREE_FLOW as f64));
        let travel = |c: f64| FREE_FLOW as f64 * (1.0 + c);
        for day in 0..3 {
            for j in 0..108 {
                let (n1, n2) = (counts(s5.segment_id(), day, 2 * j), counts(s5.segment_id(), day, 2 * j + 1));
                let merged = (n1 * travel(s5.value(day, 2 * j)) + n2 * travel(s5.value(day, 2 * j + 1))) / (n1 + n2);
                assert!((travel(s10.value(day, j)) - merged).abs() < 1e-9, "day {day} slot {j}");
            }
        }
    }
}

#[test]
fn a_slot_at_twice_the_free_flow_time_has_level_one() {
    let date = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
    let mut tr = Vec::new();
    for slot in 0..216i64 {
        let travel = if slot == 30 { 2 * FREE_FLOW } else { FREE_FLOW };
        let exit = ts(date, slot * 300 + 10);
        tr.push(SegmentTraversal { segment_id: "s".into(), enter_ts: exit - travel, exit_ts: exit });
    }
    let out = aggregate_traversals(&tr, &config(5)).unwrap();
    let s = &out.series[0];
    assert_eq!(s.value(0, 30), 1.0);
    assert_eq!(s.value(0, 29), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn record_order_does_not_matter(seed in any::<u64>(), minutes in prop::sample::select(vec![5u32, 10, 30])) {
        let tr = traversals(seed % 8);
        let mut shuffled = tr.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = aggregate_traversals(&tr, &config(minutes)).unwrap();
        let b = aggregate_traversals(&shuffled, &config(minutes)).unwrap();
        prop_assert_eq!(a.series, b.series);
    }
}
