//! `trafficmon`: batch entry points for every pipeline stage, evaluation and the service.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use trafficmon::anomaly::{detect_anomalies, write_anomaly_export, AnomalyConfig, IntersectionPolicy};
use trafficmon::counting::{counting_step, dedup_detections, read_count_csv, CountTally, CountingLine};
use trafficmon::evaluation::{
    confusion_matrix, match_anomalies, match_detections, per_class_f1, s3_from_rmse, s3_score, switch_rate,
    AnomalyScore, ConfusionMatrix, Outcome, NRMSE_MAX_S, NRMSE_MIN_S,
};
use trafficmon::ingest::{load_camera_registry, read_detection_log, write_detection_log, FrameDetections};
use trafficmon::motion::{MotionConfig, RoadType};
use trafficmon::queue::{
    compute_thresholds, day_of, read_queue_samples, severity_heatmap, write_queue_masks, write_queue_samples,
    ThresholdConfig,
};
use trafficmon::simulator::{
    freeway_scenario, generate_scenario, intersection_scenario, read_ground_truth, write_ground_truth, ScenarioConfig,
};
use trafficmon::tracking::{
    read_track_dump, track_all, write_track_dump, FeatureTrackerConfig, IouTrackerConfig, Tracker, TrackerConfig,
};
use trafficmon::ClassLabel;
use trafficmon_service::{AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "trafficmon", version, about = "Traffic monitoring engine", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic detection log with ground truth.
    Simulate(SimulateArgs),
    /// Track a detection log into a CSV track dump.
    Track(TrackArgs),
    /// Learn queue severity thresholds and print a severity heatmap.
    Queue(QueueArgs),
    /// Detect stalled-vehicle anomalies in a detection log.
    Anomaly(AnomalyArgs),
    /// Count line crossings per class and direction.
    Count(CountArgs),
    /// Score predictions against simulator ground truth.
    Eval(EvalArgs),
    /// Run the HTTP/SSE service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Freeway,
    Intersection,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario config (JSON, or TOML by extension).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Preset duration in seconds.
    #[arg(long, default_value_t = 300.0)]
    duration_s: f64,
    /// Preset spawn rate per lane, vehicles per minute.
    #[arg(long, default_value_t = 6.0)]
    rate: f64,
    /// Detection log output.
    #[arg(long)]
    log: PathBuf,
    /// Ground-truth output.
    #[arg(long)]
    truth: PathBuf,
    /// Queue samples (or masks) output, when the scenario has a queue profile.
    #[arg(long)]
    queue: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrackerKind {
    Iou,
    Feature,
}

#[derive(Debug, Args)]
struct TrackerArgs {
    #[arg(long, value_enum, default_value = "iou")]
    tracker: TrackerKind,
    #[arg(long)]
    sigma_iou: Option<f64>,
    #[arg(long)]
    sigma_l: Option<f64>,
    #[arg(long)]
    sigma_h: Option<f64>,
    #[arg(long)]
    t_min: Option<usize>,
    #[arg(long)]
    max_cosine_distance: Option<f64>,
    #[arg(long)]
    iou_gate: Option<f64>,
    #[arg(long)]
    max_age: Option<u32>,
}

impl TrackerArgs {
    fn config(&self) -> TrackerConfig {
        match self.tracker {
            TrackerKind::Iou => {
                let d = IouTrackerConfig::default();
                TrackerConfig::Iou(IouTrackerConfig {
                    sigma_iou: self.sigma_iou.unwrap_or(d.sigma_iou),
                    sigma_l: self.sigma_l.unwrap_or(d.sigma_l),
                    sigma_h: self.sigma_h.unwrap_or(d.sigma_h),
                    t_min: self.t_min.unwrap_or(d.t_min),
                })
            }
            TrackerKind::Feature => {
                let d = FeatureTrackerConfig::default();
                TrackerConfig::Feature(FeatureTrackerConfig {
                    max_cosine_distance: self.max_cosine_distance.unwrap_or(d.max_cosine_distance),
                    iou_gate: self.iou_gate.unwrap_or(d.iou_gate),
                    max_age_frames: self.max_age.unwrap_or(d.max_age_frames),
                })
            }
        }
    }
}

#[derive(Debug, Args)]
struct LogInput {
    /// Detection log, `-` for stdin.
    #[arg(long, short)]
    input: PathBuf,
    /// Camera to process when the log holds several.
    #[arg(long)]
    camera: Option<String>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    log: LogInput,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Merge same-class boxes above this IOU before tracking.
    #[arg(long)]
    dedup_iou: Option<f64>,
    /// Track dump output, stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueueArgs {
    /// Queue samples (`pl` values or masks), `-` for stdin.
    #[arg(long, short)]
    input: PathBuf,
    /// Separate history to learn thresholds from; defaults to the input itself.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value_t = 1)]
    bin_minutes: u32,
    #[arg(long, default_value_t = 7)]
    min_history_days: u32,
    /// Thresholds JSON output.
    #[arg(long)]
    thresholds_out: Option<PathBuf>,
    /// Heatmap CSV output, stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoadArg {
    Auto,
    Freeway,
    Intersection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Reject,
    #[value(name = "confirm-60s")]
    Confirm60s,
}

#[derive(Debug, Args)]
struct AnomalyArgs {
    #[command(flatten)]
    log: LogInput,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[arg(long, value_enum, default_value = "auto")]
    road_type: RoadArg,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Full anomaly config (JSON or TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Merge same-class boxes above this IOU before tracking.
    #[arg(long, default_value_t = 0.5)]
    dedup_iou: f64,
    #[arg(long)]
    no_dedup: bool,
    /// Also emit rejected and unconfirmed candidates.
    #[arg(long)]
    candidates: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[command(flatten)]
    log: LogInput,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Counting lines as a JSON array.
    #[arg(long, required_unless_present = "registry")]
    lines: Option<PathBuf>,
    /// Camera registry to take the lines from (with --camera or a single-camera log).
    #[arg(long, conflicts_with = "lines")]
    registry: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    dedup_iou: f64,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long, default_value_t = 60.0)]
    window_s: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground truth written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Track dump to score.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Anomaly export to score.
    #[arg(long)]
    anomalies: Option<PathBuf>,
    /// Count CSV to score.
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    min_iou: f64,
    /// Start-time tolerance for matching anomalies.
    #[arg(long, default_value_t = 10.0)]
    anomaly_window_s: f64,
    /// Use this anomaly F1 instead of matching.
    #[arg(long)]
    anomaly_f1: Option<f64>,
    /// Use this anomaly RMSE (seconds) instead of matching.
    #[arg(long)]
    anomaly_rmse: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service config (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    storage: Option<PathBuf>,
    /// Camera registry to register on start; known cameras are skipped.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// `camera=path` detection logs to replay once the server is up.
    #[arg(long, value_parser = parse_replay)]
    replay: Vec<(String, PathBuf)>,
    /// Replay speed relative to real time; 0 replays as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    replay_speed: f64,
}

fn parse_replay(s: &str) -> Result<(String, PathBuf), String> {
    let (cam, path) = s.split_once('=').ok_or_else(|| format!("expected camera=path, got {s:?}"))?;
    Ok((cam.to_string(), PathBuf::from(path)))
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a log and returns the frames of one camera.
fn read_frames(args: &LogInput) -> Result<(String, Vec<FrameDetections>)> {
    let frames = read_detection_log(open_input(&args.input)?)
        .with_context(|| format!("reading detection log {}", args.input.display()))?;
    let mut by_cam: BTreeMap<String, Vec<FrameDetections>> = BTreeMap::new();
    for f in frames {
        by_cam.entry(f.camera_id.clone()).or_default().push(f);
    }
    match &args.camera {
        Some(c) => match by_cam.remove(c) {
            Some(f) => Ok((c.clone(), f)),
            None => bail!("camera {c:?} not in log"),
        },
        None if by_cam.len() <= 1 => Ok(by_cam.pop_first().unwrap_or_default()),
        None => bail!("log holds {} cameras ({}); pick one with --camera", by_cam.len(), by_cam.keys().cloned().collect::<Vec<_>>().join(", ")),
    }
}

fn dedup_all(frames: Vec<FrameDetections>, iou: Option<f64>) -> Result<Vec<FrameDetections>> {
    match iou {
        None => Ok(frames),
        Some(t) if (0.0..=1.0).contains(&t) => Ok(frames.iter().map(|f| dedup_detections(f, t)).collect()),
        Some(t) => bail!("dedup IOU {t} outside [0, 1]"),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = match (&a.config, a.preset) {
        (Some(p), _) => load_config(p)?,
        (None, Some(Preset::Freeway)) => freeway_scenario(a.seed.unwrap_or(0), a.duration_s, a.rate),
        (None, Some(Preset::Intersection)) => intersection_scenario(a.seed.unwrap_or(0), a.duration_s, a.rate),
        (None, None) => bail!("need --config or --preset"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let s = generate_scenario(&cfg)?;
    let mut out = open_output(Some(&a.log))?;
    write_detection_log(&mut out, &s.frames)?;
    out.flush()?;
    let mut out = open_output(Some(&a.truth))?;
    write_ground_truth(&mut out, &s.truth)?;
    out.flush()?;
    match (&a.queue, cfg.queue_profile.is_some()) {
        (Some(p), true) => {
            let mut out = open_output(Some(p))?;
            if s.queue_masks.is_empty() {
                write_queue_samples(&mut out, &s.queue_samples)?;
            } else {
                write_queue_masks(&mut out, &s.queue_masks)?;
            }
            out.flush()?;
        }
        (Some(_), false) => bail!("--queue given but the scenario has no queue_profile"),
        _ => {}
    }
    Ok(())
}

fn track(a: TrackArgs) -> Result<()> {
    let (_, frames) = read_frames(&a.log)?;
    let frames = dedup_all(frames, a.dedup_iou)?;
    let tracks = track_all(&frames, a.tracker.config())?;
    let mut out = open_output(a.output.as_deref())?;
    write_track_dump(&mut out, &tracks)?;
    out.flush()?;
    Ok(())
}

fn queue(a: QueueArgs) -> Result<()> {
    let cfg = ThresholdConfig { k: a.k, bin_minutes: a.bin_minutes, min_history_days: a.min_history_days };
    let samples = read_queue_samples(open_input(&a.input)?).context("reading queue samples")?;
    let history = match &a.history {
        Some(p) => read_queue_samples(open_input(p)?).context("reading queue history")?,
        None => samples.clone(),
    };
    let th = compute_thresholds(&history, &cfg)?;
    if let Some(p) = &a.thresholds_out {
        write_json(Some(p), &th)?;
    }
    let (Some(first), Some(last)) =
        (samples.iter().map(|s| day_of(s.timestamp_ms)).min(), samples.iter().map(|s| day_of(s.timestamp_ms)).max())
    else {
        bail!("no queue samples in input");
    };
    let hm = severity_heatmap(&samples, &th, first, (last - first + 1) as usize, a.bin_minutes)?;
    let mut out = open_output(a.output.as_deref())?;
    out.write_all(hm.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn anomaly(a: AnomalyArgs) -> Result<()> {
    let mut cfg: AnomalyConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => AnomalyConfig::default(),
    };
    if let Some(p) = a.policy {
        cfg.intersection_policy = match p {
            PolicyArg::Reject => IntersectionPolicy::Reject,
            PolicyArg::Confirm60s => IntersectionPolicy::Confirm60s,
        };
    }
    let road = match a.road_type {
        RoadArg::Auto => None,
        RoadArg::Freeway => Some(RoadType::Freeway),
        RoadArg::Intersection => Some(RoadType::Intersection),
    };
    let (_, frames) = read_frames(&a.log)?;
    let frames = dedup_all(frames, (!a.no_dedup).then_some(a.dedup_iou))?;
    let report = detect_anomalies(&frames, a.tracker.config(), &cfg, &MotionConfig::default(), road)?;
    eprintln!("road type: {:?}; {} candidate(s), {} anomaly(ies)", report.road_type, report.candidates.len(), report.anomalies.len());
    let events = if a.candidates { &report.candidates } else { &report.anomalies };
    let mut out = open_output(a.output.as_deref())?;
    write_anomaly_export(&mut out, events)?;
    out.flush()?;
    Ok(())
}

fn count(a: CountArgs) -> Result<()> {
    let (camera, frames) = read_frames(&a.log)?;
    let lines: Vec<CountingLine> = match (&a.lines, &a.registry) {
        (Some(p), _) => load_config(p)?,
        (None, Some(r)) => {
            let cams = load_camera_registry(r)?;
            let cam = cams.into_iter().find(|c| c.camera_id == camera);
            cam.with_context(|| format!("camera {camera:?} not in registry"))?.counting_lines
        }
        (None, None) => unreachable!("clap requires --lines or --registry"),
    };
    for l in &lines {
        l.validate()?;
    }
    if !(a.window_s > 0.0) {
        bail!("--window-s must be positive");
    }
    let frames = dedup_all(frames, (!a.no_dedup).then_some(a.dedup_iou))?;
    let mut tracker = Tracker::new(a.tracker.config())?;
    let mut tally = CountTally::new();
    for f in &frames {
        let events = tracker.step(f)?;
        tally = counting_step(tally, &events, &lines);
    }
    let events = tracker.finish();
    tally = counting_step(tally, &events, &lines);
    let mut out = open_output(a.output.as_deref())?;
    tally.write_csv(&mut out, (a.window_s * 1000.0).round() as i64)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrackingReport {
    predicted_tracks: usize,
    truth_tracks: usize,
    switch_rate: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    per_class_f1: BTreeMap<ClassLabel, f64>,
    confusion: ConfusionMatrix,
}

#[derive(Debug, Serialize)]
struct AnomalyReport {
    #[serde(flatten)]
    score: AnomalyScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    tp: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fp: Option<usize>,
    #[serde(rename = "fn", skip_serializing_if = "Option::is_none")]
    fn_: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CountReport {
    detected: u64,
    truth: u64,
    percentage: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking: Option<TrackingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anomaly: Option<AnomalyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counting: Option<BTreeMap<String, CountReport>>,
}

fn eval(a: EvalArgs) -> Result<()> {
    let truth = match &a.truth {
        Some(p) => Some(read_ground_truth(open_input(p)?).context("reading ground truth")?),
        None => None,
    };
    let need_truth = || truth.as_ref().context("--truth is required to score tracks, anomalies or counts");
    let mut report = EvalReport::default();

    if let Some(p) = &a.tracks {
        let truth = need_truth()?;
        let pred = read_track_dump(open_input(p)?).context("reading track dump")?;
        let m = match_detections(&pred, &truth.tracks, a.min_iou);
        let n = |o: Outcome| m.outcomes.iter().filter(|x| x.0 == o).count();
        report.tracking = Some(TrackingReport {
            predicted_tracks: pred.len(),
            truth_tracks: truth.tracks.len(),
            switch_rate: switch_rate(&pred, &truth.tracks, a.min_iou)?,
            tp: n(Outcome::TP),
            fp: n(Outcome::FP),
            fn_: n(Outcome::FN),
            per_class_f1: per_class_f1(&m),
            confusion: confusion_matrix(&m.class_pairs),
        });
    }

    let mut anomaly = None;
    if let Some(p) = &a.anomalies {
        let truth = need_truth()?;
        let pred = trafficmon::anomaly::read_anomaly_export(open_input(p)?).context("reading anomaly export")?;
        let m = match_anomalies(&pred, &truth.anomalies, a.anomaly_window_s);
        // Nothing predicted and nothing to find is a perfect score; otherwise an undefined ratio means F1 = 0.
        let f1 = if m.tp.is_empty() && m.fp.is_empty() && m.fn_.is_empty() { 1.0 } else { m.f1().unwrap_or(0.0) };
        anomaly = Some(AnomalyReport {
            score: s3_score(f1, &m.time_errors(), NRMSE_MIN_S, NRMSE_MAX_S),
            tp: Some(m.tp.len()),
            fp: Some(m.fp.len()),
            fn_: Some(m.fn_.len()),
        });
    }
    if a.anomaly_f1.is_some() || a.anomaly_rmse.is_some() {
        let base = anomaly.as_ref().map(|r| r.score);
        let f1 = a.anomaly_f1.or(base.map(|s| s.f1)).context("--anomaly-rmse needs --anomaly-f1 or --anomalies")?;
        let rmse = a.anomaly_rmse.or(base.map(|s| s.rmse_s)).context("--anomaly-f1 needs --anomaly-rmse or --anomalies")?;
        if !(0.0..=1.0).contains(&f1) || !(rmse >= 0.0) {
            bail!("anomaly F1 must lie in [0, 1] and RMSE must be non-negative");
        }
        let score = s3_from_rmse(f1, rmse, NRMSE_MIN_S, NRMSE_MAX_S);
        anomaly = Some(match anomaly {
            Some(r) => AnomalyReport { score, ..r },
            None => AnomalyReport { score, tp: None, fp: None, fn_: None },
        });
    }
    report.anomaly = anomaly;

    if let Some(p) = &a.counts {
        let truth = need_truth()?;
        let rows = read_count_csv(open_input(p)?)?;
        let mut lines: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for r in rows {
            lines.entry(r.line).or_default().0 += r.count;
        }
        for c in &truth.counts {
            lines.entry(c.line.clone()).or_default().1 += c.count;
        }
        report.counting = Some(
            lines
                .into_iter()
                .map(|(l, (d, t))| {
                    let pct = (t > 0).then(|| 100.0 * d as f64 / t as f64);
                    (l, CountReport { detected: d, truth: t, percentage: pct })
                })
                .collect(),
        );
    }

    if report.tracking.is_none() && report.anomaly.is_none() && report.counting.is_none() {
        bail!("nothing to evaluate: pass --tracks, --anomalies, --counts or --anomaly-f1/--anomaly-rmse");
    }
    write_json(a.output.as_deref(), &report)
}

async fn replay(state: AppState, camera: String, path: PathBuf, speed: f64) -> Result<()> {
    let frames = read_detection_log(open_input(&path)?).with_context(|| format!("reading {}", path.display()))?;
    let mut prev: Option<i64> = None;
    for chunk in frames.chunks(if speed > 0.0 { 1 } else { 512 }) {
        if speed > 0.0 {
            let ts = chunk[0].timestamp_ms;
            if let Some(p) = prev {
                tokio::time::sleep(Duration::from_secs_f64((ts - p).max(0) as f64 / 1000.0 / speed)).await;
            }
            prev = Some(ts);
        }
        state.ingest_frames(&camera, chunk)?;
        tokio::task::yield_now().await;
    }
    state.finish(&camera)?;
    eprintln!("replayed {} frame(s) into {camera}", frames.len());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg: ServiceConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(s) = a.storage {
        cfg.storage_root = s;
    }
    let state = AppState::open(cfg)?;
    if let Some(r) = &a.registry {
        let known: Vec<String> = state.records().into_iter().map(|r| r.camera_id).collect();
        for rec in load_camera_registry(r)? {
            if !known.contains(&rec.camera_id) {
                state.register(rec)?;
            }
        }
    }
    for (cam, _) in &a.replay {
        state.status(cam).with_context(|| format!("replay target {cam:?} is not registered"))?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        for (cam, path) in a.replay {
            let s = state.clone();
            let speed = a.replay_speed;
            tokio::spawn(async move {
                if let Err(e) = replay(s, cam.clone(), path, speed).await {
                    eprintln!("replay {cam}: {e:#}");
                }
            });
        }
        trafficmon_service::serve(state).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track(a),
        Command::Queue(a) => queue(a),
        Command::Anomaly(a) => anomaly(a),
        Command::Count(a) => count(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
