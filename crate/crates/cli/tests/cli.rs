use std::path::Path;
use std::process::{Command, Output};

use trafficmon::evaluation::switch_rate;
use trafficmon::simulator::{read_ground_truth, QueuePeak, QueueProfile, ScenarioConfig};
use trafficmon::tracking::{read_track_dump, track_all, TrackerConfig};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trafficmon")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Vec<u8> {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&[], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["track", "--bogus"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["track", "-i", "x", "--tracker", "kalman"], d.path()).status.code(), Some(2));
}

#[test]
fn invalid_input_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["track", "-i", "missing.jsonl"], d.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    std::fs::write(d.path().join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(run(&["track", "-i", "bad.jsonl"], d.path()).status.code(), Some(1));
    assert_eq!(run(&["eval"], d.path()).status.code(), Some(1));
    assert_eq!(run(&["eval", "--anomaly-f1", "1.5", "--anomaly-rmse", "3"], d.path()).status.code(), Some(1));
}

#[test]
fn simulate_track_eval_chain() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["simulate", "--preset", "intersection", "--seed", "7", "--duration-s", "180", "--log", "log.jsonl", "--truth", "truth.jsonl"], p);
    ok(&["track", "-i", "log.jsonl", "-o", "tracks.csv"], p);
    let report: serde_json::Value =
        serde_json::from_slice(&ok(&["eval", "--truth", "truth.jsonl", "--tracks", "tracks.csv"], p)).unwrap();
    assert_eq!(report["tracking"]["switch_rate"], 0.0);
    assert_eq!(report["tracking"]["fp"], 0);
    assert_eq!(report["tracking"]["fn"], 0);

    // Going through files gives the same result as tracking in-process.
    let truth = read_ground_truth(std::io::BufReader::new(std::fs::File::open(p.join("truth.jsonl")).unwrap())).unwrap();
    let dumped = read_track_dump(std::fs::File::open(p.join("tracks.csv")).unwrap()).unwrap();
    let log = trafficmon::ingest::read_detection_log(std::io::BufReader::new(std::fs::File::open(p.join("log.jsonl")).unwrap())).unwrap();
    let direct = track_all(&log, TrackerConfig::default()).unwrap();
    assert_eq!(dumped.len(), direct.len());
    assert_eq!(switch_rate(&dumped, &truth.tracks, 0.5).unwrap(), switch_rate(&direct, &truth.tracks, 0.5).unwrap());
}

#[test]
fn anomaly_and_count_chain() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let mut cfg = trafficmon::simulator::freeway_scenario(3, 200.0, 6.0);
    cfg.stalls.push(trafficmon::simulator::StallConfig { lane: 1, start_s: 50.0, duration_s: 90.0 });
    std::fs::write(p.join("scenario.json"), serde_json::to_vec(&cfg).unwrap()).unwrap();
    std::fs::write(p.join("lines.json"), serde_json::to_vec(&cfg.counting_lines).unwrap()).unwrap();
    ok(&["simulate", "--config", "scenario.json", "--log", "log.jsonl", "--truth", "truth.jsonl"], p);
    ok(&["anomaly", "-i", "log.jsonl", "--road-type", "freeway", "-o", "anomalies.jsonl"], p);
    ok(&["count", "-i", "log.jsonl", "--lines", "lines.json", "-o", "counts.csv"], p);
    let report: serde_json::Value = serde_json::from_slice(&ok(
        &["eval", "--truth", "truth.jsonl", "--anomalies", "anomalies.jsonl", "--counts", "counts.csv"],
        p,
    ))
    .unwrap();
    assert_eq!(report["anomaly"]["f1"], 1.0);
    assert!(report["anomaly"]["rmse_s"].as_f64().unwrap() <= 10.0);
    assert_eq!(report["counting"]["mid"]["percentage"], 100.0);

    // Intersection override with the default policy drops the stall.
    ok(&["anomaly", "-i", "log.jsonl", "--road-type", "intersection", "-o", "none.jsonl"], p);
    assert!(std::fs::read_to_string(p.join("none.jsonl")).unwrap().is_empty());
    ok(&["anomaly", "-i", "log.jsonl", "--road-type", "intersection", "--policy", "confirm-60s", "-o", "lenient.jsonl"], p);
    assert_eq!(std::fs::read_to_string(p.join("lenient.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn queue_command_marks_peaks() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let base = ScenarioConfig { seed: 1, queue_profile: Some(QueueProfile::default()), ..Default::default() };
    let peak = ScenarioConfig {
        seed: 2,
        start_ts_ms: 7 * 86_400_000,
        queue_profile: Some(QueueProfile {
            days: 1,
            peaks: vec![QueuePeak { start_minute: 480, end_minute: 540, extra_px: 150.0, days: None }],
            ..Default::default()
        }),
        ..Default::default()
    };
    std::fs::write(p.join("base.toml"), toml::to_string(&base).unwrap()).unwrap();
    std::fs::write(p.join("peak.json"), serde_json::to_vec(&peak).unwrap()).unwrap();
    ok(&["simulate", "--config", "base.toml", "--log", "l0", "--truth", "t0", "--queue", "history.jsonl"], p);
    ok(&["simulate", "--config", "peak.json", "--log", "l1", "--truth", "t1", "--queue", "today.jsonl"], p);
    let csv = String::from_utf8(ok(
        &["queue", "-i", "today.jsonl", "--history", "history.jsonl", "--thresholds-out", "th.json"],
        p,
    ))
    .unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("date,00:00,00:01"));
    let cells: Vec<&str> = rows[1].split(',').skip(1).collect();
    assert_eq!(cells.len(), 1440);
    let high: Vec<usize> = cells.iter().enumerate().filter(|(_, c)| **c == "H").map(|(i, _)| i).collect();
    assert_eq!(high, (480..540).collect::<Vec<_>>());
    let th: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("th.json")).unwrap()).unwrap();
    for level in ["low", "medium", "high"] {
        assert!(th[level].as_f64().unwrap().is_finite());
    }

    // Without a separate history the input needs a week of its own.
    assert_eq!(run(&["queue", "-i", "today.jsonl"], p).status.code(), Some(1));
}
