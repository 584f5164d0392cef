use std::io::Cursor;

use chrono::{TimeZone, Utc};
use edgesense_core::trace::{self, read_csv, read_events_csv, write_csv, write_events_csv};
use edgesense_core::{EventSpec, PollutantKind, TraceFrame, TraceSet};
use proptest::prelude::*;

fn hourly(n_zones: u32, values: Vec<Vec<f64>>) -> TraceSet {
    TraceSet {
        n_zones,
        step_minutes: 60,
        start: Utc.with_ymd_and_hms(2023, 6, 1, 0, 0, 0).unwrap(),
        frames: values
            .into_iter()
            .enumerate()
            .map(|(i, values)| TraceFrame {
                round_index: i as u32,
                values,
            })
            .collect(),
        events: Vec::new(),
    }
}

fn constant(n_zones: u32, frames: usize, step_minutes: u32) -> TraceSet {
    let cells = n_zones as usize * PollutantKind::COUNT;
    let mut t = hourly(n_zones, vec![vec![10.0; cells]; frames]);
    t.step_minutes = step_minutes;
    t
}

fn arb_trace() -> impl Strategy<Value = TraceSet> {
    (1u32..4, 2usize..8).prop_flat_map(|(z, f)| {
        let cells = z as usize * PollutantKind::COUNT;
        prop::collection::vec(prop::collection::vec(0.0f64..1e4, cells), f)
            .prop_map(move |v| hourly(z, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn csv_round_trip_is_exact(t in arb_trace()) {
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let back = read_csv(Cursor::new(buf), t.n_zones, &PollutantKind::ALL).unwrap();
        prop_assert_eq!(back.start, t.start);
        prop_assert_eq!(back.step_minutes, 60);
        prop_assert_eq!(back.frames, t.frames);
    }
}

#[test]
fn events_round_trip() {
    let t = trace::inject_events(&constant(3, 2880, 15), 0.5, (4, 16), (2.0, 5.0), 11);
    assert!(!t.events.is_empty());
    let mut buf = Vec::new();
    write_events_csv(&t.events, &mut buf).unwrap();
    let back: Vec<EventSpec> = read_events_csv(Cursor::new(buf)).unwrap();
    assert_eq!(back, t.events);
}

#[test]
fn rows_in_any_order_load_the_same() {
    let t = hourly(
        2,
        vec![
            (0..12).map(f64::from).collect(),
            (12..24).map(f64::from).collect(),
        ],
    );
    let mut buf = Vec::new();
    write_csv(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let shuffled = format!("{header}\n{}\n", lines.join("\n"));
    let back = read_csv(Cursor::new(shuffled), 2, &PollutantKind::ALL).unwrap();
    assert_eq!(back.frames, t.frames);
}

#[test]
fn event_counts_follow_the_rate() {
    // 20 zones x 30 days at 0.5 per zone-day: Poisson with mean 300.
    let base = constant(20, 30 * 96, 15);
    let mean: f64 = 300.0;
    let sd = mean.sqrt();
    let mut total = 0.0;
    for seed in 0..10 {
        let n = trace::inject_events(&base, 0.5, (4, 16), (2.0, 5.0), seed)
            .events
            .len() as f64;
        assert!((n - mean).abs() <= 3.0 * sd, "seed {seed}: {n} events");
        total += n;
    }
    let avg = total / 10.0;
    assert!((avg - mean).abs() <= 3.0 * sd / 10f64.sqrt(), "mean {avg}");
}

#[test]
fn events_stay_inside_the_trace() {
    let base = constant(4, 500, 15);
    let t = trace::inject_events(&base, 3.0, (10, 40), (2.0, 5.0), 5);
    for e in &t.events {
        assert!(e.start_round < e.end_round && e.end_round <= 500);
        assert!(e.zone_id < 4);
        assert!(e.magnitude >= 2.0 && e.magnitude < 5.0);
        let d = e.end_round - e.start_round;
        assert!(d <= 40 && (d >= 10 || e.end_round == 500));
    }
}

#[test]
fn injected_cells_are_scaled() {
    let base = constant(2, 200, 15);
    let ev = EventSpec {
        zone_id: 1,
        start_round: 50,
        end_round: 60,
        pollutant: PollutantKind::So2,
        magnitude: 3.0,
    };
    let t = trace::apply_events(&base, vec![ev]).unwrap();
    for (r, f) in t.frames.iter().enumerate() {
        let expect = if (50..60).contains(&r) { 30.0 } else { 10.0 };
        assert_eq!(f.get(1, PollutantKind::So2), expect);
        assert_eq!(f.get(0, PollutantKind::So2), 10.0);
        assert_eq!(f.get(1, PollutantKind::No2), 10.0);
    }
}
