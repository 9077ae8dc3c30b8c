use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use trafficmon::queue::{
    compute_thresholds, mask_pixel_length, read_queue_samples, severity_heatmap, write_queue_masks, QueueSample,
    SeverityLevel, ThresholdConfig, MS_PER_DAY,
};
use trafficmon::simulator::{generate_scenario, MaskOutput, QueuePeak, QueueProfile, ScenarioConfig};
use trafficmon::BitMask;

/// Quartiles via the textbook `(n - 1) p` interpolation rule.
fn ref_quartiles(mut v: Vec<f64>) -> [f64; 3] {
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    [q(0.25), q(0.5), q(0.75)]
}

fn ref_thresholds(history: &[(i64, f64)], k: f64) -> [f64; 3] {
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &(ts, pl) in history {
        bins.entry(ts.rem_euclid(MS_PER_DAY) / 60_000).or_default().push(pl);
    }
    let qs: Vec<[f64; 3]> = bins.into_values().map(ref_quartiles).collect();
    let base = qs.iter().map(|q| (q[0] + q[1] + q[2]) / 3.0).fold(f64::MIN, f64::max);
    let std = |i: usize| {
        let n = qs.len() as f64;
        let m = qs.iter().map(|q| q[i]).sum::<f64>() / n;
        (qs.iter().map(|q| (q[i] - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    [base + k * std(0), base + k * std(1), base + k * std(2)]
}

fn samples(history: &[(i64, f64)]) -> Vec<QueueSample> {
    history
        .iter()
        .map(|&(ts, pl)| QueueSample { camera_id: "c".into(), timestamp_ms: ts, pixel_length: pl, mask_id: None })
        .collect()
}

fn history_strategy() -> impl Strategy<Value = Vec<(i64, f64)>> {
    // Seven guaranteed days plus extra random samples over a small set of minutes.
    let days = prop::collection::vec((0i64..20, 0.0f64..500.0), 7..8).prop_map(|v| {
        v.into_iter().enumerate().map(|(d, (m, pl))| (d as i64 * MS_PER_DAY + m * 60_000, pl)).collect::<Vec<_>>()
    });
    let extra = prop::collection::vec((0i64..10, 0i64..20, 0i64..60_000, 0.0f64..500.0), 0..200)
        .prop_map(|v| v.into_iter().map(|(d, m, off, pl)| (d * MS_PER_DAY + m * 60_000 + off, pl)).collect::<Vec<_>>());
    (days, extra).prop_map(|(mut a, b)| {
        a.extend(b);
        a
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn thresholds_match_reference(history in history_strategy(), k in 0.0f64..3.0) {
        let th = compute_thresholds(&samples(&history), &ThresholdConfig { k, ..Default::default() }).unwrap();
        let want = ref_thresholds(&history, k);
        for (got, want) in [th.low, th.medium, th.high].into_iter().zip(want) {
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn thresholds_scale_and_ignore_order(history in history_strategy(), c in 0.1f64..10.0, rot in 0usize..50) {
        let cfg = ThresholdConfig::default();
        let base = compute_thresholds(&samples(&history), &cfg).unwrap();
        let scaled: Vec<_> = history.iter().map(|&(t, p)| (t, p * c)).collect();
        let s = compute_thresholds(&samples(&scaled), &cfg).unwrap();
        for (a, b) in [(base.low, s.low), (base.medium, s.medium), (base.high, s.high)] {
            prop_assert!((a * c - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let mut perm = history.clone();
        let n = perm.len();
        perm.rotate_left(rot % n);
        perm.reverse();
        let p = compute_thresholds(&samples(&perm), &cfg).unwrap();
        prop_assert!((p.low - base.low).abs() < 1e-9 && (p.medium - base.medium).abs() < 1e-9 && (p.high - base.high).abs() < 1e-9);
    }

    #[test]
    fn pixel_length_matches_all_pairs(pixels in prop::collection::btree_set((0u32..40, 0u32..40), 1..120)) {
        let mask = BitMask::from_pixels(40, 40, pixels.iter().copied()).unwrap();
        let pts: Vec<_> = pixels.iter().collect();
        let mut best = 0i64;
        for a in &pts {
            for b in &pts {
                let (dx, dy) = (a.0 as i64 - b.0 as i64, a.1 as i64 - b.1 as i64);
                best = best.max(dx * dx + dy * dy);
            }
        }
        prop_assert_eq!(mask_pixel_length::<f64>(&mask).unwrap(), (best as f64).sqrt());
    }
}

#[test]
fn constant_history_gives_equal_thresholds() {
    let history: Vec<_> = (0..7).flat_map(|d| (0..1440).map(move |m| (d * MS_PER_DAY + m * 60_000, 42.0))).collect();
    let th = compute_thresholds(&samples(&history), &ThresholdConfig::default()).unwrap();
    assert_eq!((th.low, th.medium, th.high), (42.0, 42.0, 42.0));
}

#[test]
fn too_short_history_is_rejected() {
    let history: Vec<_> = (0..6).map(|d| (d * MS_PER_DAY, 1.0)).collect();
    assert!(compute_thresholds(&samples(&history), &ThresholdConfig::default()).is_err());
}

#[test]
fn simulated_peaks_are_the_only_high_cells() {
    let baseline = ScenarioConfig { seed: 1, queue_profile: Some(QueueProfile::default()), ..Default::default() };
    let history = generate_scenario(&baseline).unwrap();
    let th = compute_thresholds(&history.queue_samples, &ThresholdConfig::default()).unwrap();

    let peaks = vec![
        QueuePeak { start_minute: 7 * 60, end_minute: 9 * 60, extra_px: 150.0, days: None },
        QueuePeak { start_minute: 17 * 60, end_minute: 18 * 60 + 30, extra_px: 150.0, days: Some(vec![0, 2, 4]) },
    ];
    let week = ScenarioConfig {
        seed: 2,
        start_ts_ms: 7 * MS_PER_DAY,
        queue_profile: Some(QueueProfile { peaks, ..Default::default() }),
        ..Default::default()
    };
    let s = generate_scenario(&week).unwrap();
    let hm = severity_heatmap(&s.queue_samples, &th, 7, 7, 1).unwrap();
    let mut expected = BTreeSet::new();
    for p in &s.truth.peaks {
        for m in p.start_minute..p.end_minute {
            expected.insert(((p.day - 7) as usize, m as usize));
        }
    }
    let mut high = BTreeSet::new();
    for (r, row) in hm.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if cell.as_ref().is_some_and(|x| x.severity == SeverityLevel::High) {
                high.insert((r, c));
            }
        }
    }
    assert_eq!(high, expected);
}

#[test]
fn simulated_masks_measure_exactly() {
    let cfg = ScenarioConfig {
        seed: 5,
        queue_profile: Some(QueueProfile {
            days: 1,
            sample_interval_s: 600,
            masks: Some(MaskOutput { thickness_px: 6, image_width: 640, image_height: 480 }),
            ..Default::default()
        }),
        ..Default::default()
    };
    let s = generate_scenario(&cfg).unwrap();
    let mut buf = Vec::new();
    write_queue_masks(&mut buf, &s.queue_masks).unwrap();
    let measured = read_queue_samples(buf.as_slice()).unwrap();
    assert_eq!(measured.len(), s.truth.queue.len());
    for (m, t) in measured.iter().zip(&s.truth.queue) {
        assert!((m.pixel_length - t.pixel_length).abs() < 1e-9);
    }
}
