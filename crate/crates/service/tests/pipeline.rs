use trafficmon::evaluation::match_anomalies;
use trafficmon::ingest::CameraRecord;
use trafficmon::queue::{QueueSample, SeverityLevel, SeverityThresholds, MS_PER_MINUTE};
use trafficmon::simulator::{freeway_scenario, generate_scenario, QueuePeak, QueueProfile, ScenarioConfig, StallConfig};
use trafficmon_service::pipeline::{CameraPipeline, PipelineConfig, PipelineOutput, QueueSeverity, ServiceEvent};

fn record_for(cfg: &ScenarioConfig) -> CameraRecord {
    let mut r = CameraRecord::new(cfg.camera_id.clone(), cfg.frame_rate_fps);
    r.counting_lines = cfg.counting_lines.clone();
    r
}

fn run_frames(cfg: &ScenarioConfig, pcfg: PipelineConfig) -> (PipelineOutput, CameraPipeline) {
    let s = generate_scenario(cfg).unwrap();
    let mut p = CameraPipeline::new(record_for(cfg), pcfg).unwrap();
    let mut out = PipelineOutput::default();
    for f in &s.frames {
        let o = p.push_frame(f).unwrap();
        out.events.extend(o.events);
        out.aggregates.extend(o.aggregates);
    }
    let o = p.finish();
    out.events.extend(o.events);
    out.aggregates.extend(o.aggregates);
    (out, p)
}

fn sample(ts: i64, pl: f64) -> QueueSample {
    QueueSample { camera_id: "q".into(), timestamp_ms: ts, pixel_length: pl, mask_id: None }
}

#[test]
fn empty_stream_produces_nothing() {
    let mut p = CameraPipeline::new(CameraRecord::new("e", 10.0), PipelineConfig::default()).unwrap();
    let out = p.finish();
    assert!(out.events.is_empty());
    assert!(out.aggregates.is_empty());
    assert_eq!(p.status().queue_severity, QueueSeverity::Unknown);
}

#[test]
fn stall_raises_one_alert() {
    let mut cfg = freeway_scenario(3, 180.0, 6.0);
    cfg.stalls.push(StallConfig { lane: 0, start_s: 40.0, duration_s: 60.0 });
    let truth = generate_scenario(&cfg).unwrap().truth;
    let (out, p) = run_frames(&cfg, PipelineConfig::default());
    let alerts: Vec<_> = out
        .events
        .iter()
        .filter_map(|e| match e {
            ServiceEvent::AnomalyAlert { event } => Some(event.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(alerts.len(), 1, "{alerts:?}");
    let m = match_anomalies(&alerts, &truth.anomalies, 10.0);
    assert_eq!(m.f1().unwrap(), 1.0);
    assert_eq!(p.alerted_anomalies().len(), 1);
    assert!(out.aggregates.iter().any(|a| !a.anomalies.is_empty()));
}

#[test]
fn minute_counts_match_truth() {
    let cfg = freeway_scenario(5, 300.0, 10.0);
    let truth = generate_scenario(&cfg).unwrap().truth;
    let (out, p) = run_frames(&cfg, PipelineConfig::default());
    let counted: u64 = out.aggregates.iter().flat_map(|a| &a.counts).map(|c| c.count).sum();
    assert_eq!(counted, truth.count("mid"));
    assert!(counted > 0);
    // 300 s of data fits in the last hour.
    assert_eq!(p.status().counts_last_hour.values().sum::<u64>(), counted);
    let ticks: u64 = out
        .events
        .iter()
        .filter_map(|e| match e {
            ServiceEvent::CountTick { counts, .. } => Some(counts.iter().map(|c| c.count).sum::<u64>()),
            _ => None,
        })
        .sum();
    assert_eq!(ticks, counted);
}

#[test]
fn replay_is_deterministic() {
    let mut cfg = freeway_scenario(9, 150.0, 8.0);
    cfg.noise.duplicate_prob = 0.1;
    cfg.noise.center_jitter_sigma_px = 0.5;
    cfg.stalls.push(StallConfig { lane: 1, start_s: 30.0, duration_s: 50.0 });
    let (a, _) = run_frames(&cfg, PipelineConfig::default());
    let (b, _) = run_frames(&cfg, PipelineConfig::default());
    assert_eq!(a, b);
}

#[test]
fn queue_severity_rises_and_falls() {
    let th = SeverityThresholds { low: 100.0, medium: 130.0, high: 160.0, k: 1.0 };
    let cfg = PipelineConfig { preset_thresholds: Some(th), ..Default::default() };
    let mut p = CameraPipeline::new(CameraRecord::new("q", 10.0), cfg).unwrap();
    let mut out = PipelineOutput::default();
    // 07:00-07:30 quiet, 07:30-08:30 peak, then quiet again; one sample every 10 s.
    let t0 = 7 * 60 * MS_PER_MINUTE;
    for i in 0..(120 * 6) {
        let ts = t0 + i * 10_000;
        let minute = i / 6;
        let pl = if (30..90).contains(&minute) { 200.0 } else { 80.0 };
        let o = p.push_queue_sample(&sample(ts, pl)).unwrap();
        out.events.extend(o.events);
        out.aggregates.extend(o.aggregates);
    }
    out.aggregates.extend(p.finish().aggregates);
    assert_eq!(out.aggregates.len(), 120);
    let sev: Vec<_> = out.aggregates.iter().map(|a| a.severity.unwrap()).collect();
    let mut transitions = vec![sev[0]];
    for s in &sev {
        if transitions.last() != Some(s) {
            transitions.push(*s);
        }
    }
    assert_eq!(transitions, [SeverityLevel::Low, SeverityLevel::High, SeverityLevel::Low]);
    assert!(sev[30..90].iter().all(|s| *s == SeverityLevel::High));
    let statuses: Vec<QueueSeverity> = out
        .events
        .iter()
        .filter_map(|e| match e {
            ServiceEvent::StatusDelta { status } => Some(status.queue_severity),
            _ => None,
        })
        .collect();
    assert!(statuses.contains(&QueueSeverity::High));
    assert_eq!(p.status().queue_severity, QueueSeverity::Low);
}

#[test]
fn week_of_minutes_and_learned_thresholds() {
    let mut p = CameraPipeline::new(CameraRecord::new("q", 10.0), PipelineConfig::default()).unwrap();
    let mut n = 0;
    let days = 8;
    for m in 0..(days * 1440) {
        let ts = m * MS_PER_MINUTE + 5_000;
        let pl = 100.0 + (m % 1440) as f64 / 100.0;
        n += p.push_queue_sample(&sample(ts, pl)).unwrap().aggregates.len();
        if m == 7 * 1440 - 1 {
            assert!(p.thresholds().is_none(), "thresholds need a full week of history");
        }
    }
    n += p.finish().aggregates.len();
    assert_eq!(n as i64, days * 1440);
    // The eighth day learns from the first seven: every bin has a constant value, so L = M = H.
    let th = *p.thresholds().expect("learned after seven days");
    assert_eq!(th.low, th.high);
}

#[test]
fn out_of_order_input_is_rejected() {
    let mut p = CameraPipeline::new(CameraRecord::new("q", 10.0), PipelineConfig::default()).unwrap();
    p.push_queue_sample(&sample(120_000, 10.0)).unwrap();
    assert!(p.push_queue_sample(&sample(60_000, 10.0)).is_err());
    assert!(p.push_queue_sample(&sample(130_000, f64::NAN)).is_err());
    let mut other = sample(140_000, 1.0);
    other.camera_id = "x".into();
    assert!(p.push_queue_sample(&other).is_err());
}

#[test]
fn learned_severity_follows_simulated_peak() {
    // A quiet week, then a morning peak on the eighth day only.
    let profile = QueueProfile {
        days: 8,
        peaks: vec![QueuePeak { start_minute: 7 * 60, end_minute: 9 * 60, extra_px: 150.0, days: Some(vec![7]) }],
        ..Default::default()
    };
    let cfg = ScenarioConfig { seed: 11, camera_id: "q".into(), queue_profile: Some(profile), ..Default::default() };
    let s = generate_scenario(&cfg).unwrap();
    let mut p = CameraPipeline::new(CameraRecord::new("q", 10.0), PipelineConfig::default()).unwrap();
    let mut aggs = Vec::new();
    for q in &s.queue_samples {
        aggs.extend(p.push_queue_sample(q).unwrap().aggregates);
    }
    aggs.extend(p.finish().aggregates);
    assert_eq!(aggs.len(), 8 * 1440);
    let day7 = &aggs[7 * 1440..];
    assert!(day7.iter().all(|a| a.severity.is_some()));
    let high: Vec<usize> =
        day7.iter().enumerate().filter(|(_, a)| a.severity == Some(SeverityLevel::High)).map(|(i, _)| i).collect();
    let peak = &s.truth.peaks[0];
    assert_eq!(s.truth.peaks.len(), 1);
    assert_eq!(high, (peak.start_minute as usize..peak.end_minute as usize).collect::<Vec<_>>());
    assert_eq!(day7[peak.start_minute as usize - 1].severity, Some(SeverityLevel::Low));
    assert_eq!(day7[peak.end_minute as usize].severity, Some(SeverityLevel::Low));
}
