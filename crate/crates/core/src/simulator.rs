//! Deterministic synthetic traffic: detection logs, queue samples and exact ground truth.
//!
//! Vehicles move at constant lane speed along lane polylines. A candidate vehicle
//! is admitted only if its box keeps a minimum gap to every admitted vehicle in
//! every frame, so noise-free identities are unambiguous by construction.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyEvent, AnomalyStatus};
use crate::counting::{CountTally, CountingLine, CrossingSign};
use crate::geometry::{BBox, Point2};
use crate::ingest::FrameDetections;
use crate::queue::{day_of, QueueMaskSample, QueueSample, MS_PER_DAY, MS_PER_MINUTE};
use crate::types::{ClassLabel, Detection, Direction, MaskShape, Track, TrackState};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimulatorError> {
    Err(SimulatorError::Validation(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub center_jitter_sigma_px: f64,
    pub dropout_prob: f64,
    pub duplicate_prob: f64,
    pub duplicate_iou_min: f64,
    pub score_range: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_jitter_sigma_px: 0.0,
            dropout_prob: 0.0,
            duplicate_prob: 0.0,
            duplicate_iou_min: 0.7,
            score_range: [0.9, 1.0],
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if !(self.center_jitter_sigma_px.is_finite() && self.center_jitter_sigma_px >= 0.0) {
            return invalid("center_jitter_sigma_px must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return invalid("dropout_prob must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.duplicate_prob) {
            return invalid("duplicate_prob must be in [0, 1)");
        }
        if !(self.duplicate_iou_min > 0.0 && self.duplicate_iou_min <= 1.0) {
            return invalid("duplicate_iou_min must be in (0, 1]");
        }
        let [lo, hi] = self.score_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return invalid("score_range must satisfy 0 <= lo <= hi <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneConfig {
    pub polyline: Vec<[f64; 2]>,
    pub direction: Direction,
    pub speed_px_s: f64,
    /// Vehicles per minute, per class.
    #[serde(default)]
    pub spawn_rates: BTreeMap<ClassLabel, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallConfig {
    pub lane: usize,
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenWindow {
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePeak {
    pub start_minute: u32,
    /// Exclusive.
    pub end_minute: u32,
    pub extra_px: f64,
    /// Day offsets the peak applies to; all days when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days: Option<Vec<u32>>,
}

/// Emit elongated rectangular masks instead of bare lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskOutput {
    pub thickness_px: u32,
    pub image_width: u32,
    pub image_height: u32,
}

/// Time-of-day pixel-length curve: a daily sinusoid plus Gaussian noise and peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueProfile {
    pub days: u32,
    pub sample_interval_s: u32,
    pub baseline_px: f64,
    pub diurnal_amplitude_px: f64,
    pub noise_sigma_px: f64,
    pub peaks: Vec<QueuePeak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskOutput>,
}

impl Default for QueueProfile {
    fn default() -> Self {
        Self {
            days: 7,
            sample_interval_s: 60,
            baseline_px: 100.0,
            diurnal_amplitude_px: 20.0,
            noise_sigma_px: 2.0,
            peaks: Vec::new(),
            masks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub camera_id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate_fps: f64,
    pub image_size: [u32; 2],
    pub start_ts_ms: i64,
    pub lanes: Vec<LaneConfig>,
    pub stalls: Vec<StallConfig>,
    pub frozen_windows: Vec<FrozenWindow>,
    pub counting_lines: Vec<CountingLine>,
    pub queue_profile: Option<QueueProfile>,
    pub noise: NoiseConfig,
    /// Dimension of per-vehicle appearance embeddings; 0 disables them.
    pub embedding_dim: usize,
    /// Minimum clearance between boxes of different vehicles.
    pub min_gap_px: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            camera_id: "sim".into(),
            seed: 0,
            duration_s: 60.0,
            frame_rate_fps: 10.0,
            image_size: [1280, 720],
            start_ts_ms: 0,
            lanes: Vec::new(),
            stalls: Vec::new(),
            frozen_windows: Vec::new(),
            counting_lines: Vec::new(),
            queue_profile: None,
            noise: NoiseConfig::default(),
            embedding_dim: 16,
            min_gap_px: 4.0,
        }
    }
}

fn polyline_length(p: &[[f64; 2]]) -> f64 {
    p.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration_s must be positive");
        }
        if !(self.frame_rate_fps.is_finite() && self.frame_rate_fps > 0.0) {
            return invalid("frame_rate_fps must be positive");
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return invalid("image size must be positive");
        }
        if !(self.min_gap_px.is_finite() && self.min_gap_px >= 0.0) {
            return invalid("min_gap_px must be >= 0");
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.polyline.len() < 2 || lane.polyline.iter().flatten().any(|v| !v.is_finite()) {
                return invalid(format!("lane {i}: polyline needs at least 2 finite points"));
            }
            if polyline_length(&lane.polyline) <= 0.0 {
                return invalid(format!("lane {i}: polyline has zero length"));
            }
            if !(lane.speed_px_s.is_finite() && lane.speed_px_s > 0.0) {
                return invalid(format!("lane {i}: speed must be positive"));
            }
            if let Some((c, r)) = lane.spawn_rates.iter().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
                return invalid(format!("lane {i}: spawn rate for {c} must be >= 0, got {r}"));
            }
        }
        for s in &self.stalls {
            if s.lane >= self.lanes.len() {
                return invalid(format!("stall refers to missing lane {}", s.lane));
            }
            if !(s.start_s >= 0.0 && s.duration_s > 0.0 && s.start_s + s.duration_s <= self.duration_s) {
                return invalid("stall window must lie inside the scenario duration");
            }
        }
        for f in &self.frozen_windows {
            if !(f.start_s >= 0.0 && f.duration_s > 0.0 && f.start_s + f.duration_s <= self.duration_s) {
                return invalid("frozen window must lie inside the scenario duration");
            }
        }
        for l in &self.counting_lines {
            l.validate().map_err(|e| SimulatorError::Validation(e.to_string()))?;
        }
        if let Some(q) = &self.queue_profile {
            if q.days == 0 || q.sample_interval_s == 0 {
                return invalid("queue profile needs days and sample interval > 0");
            }
            if !(q.noise_sigma_px.is_finite() && q.noise_sigma_px >= 0.0) {
                return invalid("queue noise sigma must be >= 0");
            }
            if q.peaks.iter().any(|p| p.start_minute >= p.end_minute || p.end_minute > 1440) {
                return invalid("queue peak minutes must satisfy start < end <= 1440");
            }
            if let Some(m) = q.masks {
                if m.thickness_px == 0 || m.thickness_px > m.image_height.min(m.image_width) {
                    return invalid("mask thickness must be positive and fit the image");
                }
            }
        }
        self.noise.validate()
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.frame_rate_fps).floor() as u64
    }

    fn frame_time_s(&self, i: u64) -> f64 {
        i as f64 / self.frame_rate_fps
    }

    fn frame_ts_ms(&self, i: u64) -> i64 {
        self.start_ts_ms + (i as f64 * 1000.0 / self.frame_rate_fps).round() as i64
    }
}

/// Box length and width along the direction of travel.
pub fn class_box_size(class: ClassLabel) -> (f64, f64) {
    match class {
        ClassLabel::Pedestrian => (8.0, 8.0),
        ClassLabel::Cyclist => (16.0, 8.0),
        ClassLabel::Car => (40.0, 20.0),
        ClassLabel::Bus => (90.0, 28.0),
        ClassLabel::Truck => (70.0, 26.0),
    }
}

/// Stable 64-bit mix used for frame digests.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Lane {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    speed: f64,
    direction: Direction,
}

impl Lane {
    fn new(cfg: &LaneConfig) -> Self {
        let mut cumulative = vec![0.0];
        for w in cfg.polyline.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        Self { points: cfg.polyline.clone(), cumulative, speed: cfg.speed_px_s, direction: cfg.direction }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point at arc length `s` and whether the segment there is mostly horizontal.
    fn at(&self, s: f64) -> ([f64; 2], bool) {
        let seg = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.points.len() - 1) - 1;
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = if len > 0.0 { ((s - self.cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        (p, (b[0] - a[0]).abs() >= (b[1] - a[1]).abs())
    }
}

#[derive(Debug, Clone, Copy)]
struct Stall {
    start_s: f64,
    duration_s: f64,
}

struct Vehicle {
    class: ClassLabel,
    /// Time at which the vehicle is at arc length 0 (ignoring any stall).
    t0: f64,
    stall: Option<Stall>,
    first_frame: u64,
    boxes: Vec<BBox<f64>>,
}

impl Vehicle {
    fn arc_length(&self, lane: &Lane, t: f64) -> f64 {
        match self.stall {
            Some(st) if t >= st.start_s + st.duration_s => lane.speed * (t - self.t0 - st.duration_s),
            Some(st) if t >= st.start_s => lane.speed * (st.start_s - self.t0),
            _ => lane.speed * (t - self.t0),
        }
    }

    fn last_frame(&self) -> u64 {
        self.first_frame + self.boxes.len() as u64 - 1
    }

    fn box_at(&self, frame: u64) -> Option<&BBox<f64>> {
        frame.checked_sub(self.first_frame).and_then(|k| self.boxes.get(k as usize))
    }
}

fn render(cfg: &ScenarioConfig, lane: &Lane, mut v: Vehicle) -> Option<Vehicle> {
    let n = cfg.frame_count();
    let (len, wid) = class_box_size(v.class);
    // Stalled vehicles sway by a fraction of a pixel so their speed is small but not zero.
    let sway = 0.1 / cfg.frame_rate_fps;
    let mut first = None;
    for i in 0..n {
        let t = cfg.frame_time_s(i);
        let s = v.arc_length(lane, t);
        if s < 0.0 {
            continue;
        }
        if s > lane.length() {
            break;
        }
        let (mut p, horizontal) = lane.at(s);
        if v.stall.is_some_and(|st| t > st.start_s && t < st.start_s + st.duration_s) {
            p[0] += if i % 2 == 0 { sway } else { -sway };
        }
        let (w, h) = if horizontal { (len, wid) } else { (wid, len) };
        v.boxes.push(BBox::from_center(p[0], p[1], w, h).ok()?);
        first.get_or_insert(i);
    }
    v.first_frame = first?;
    (v.boxes.len() >= 2).then_some(v)
}

fn clear_of(a: &BBox<f64>, b: &BBox<f64>, gap: f64) -> bool {
    a.x >= b.right() + gap || b.x >= a.right() + gap || a.y >= b.bottom() + gap || b.y >= a.bottom() + gap
}

fn compatible(v: &Vehicle, admitted: &[Vehicle], gap: f64) -> bool {
    admitted.iter().all(|o| {
        let lo = v.first_frame.max(o.first_frame);
        let hi = v.last_frame().min(o.last_frame());
        (lo..=hi.max(lo)).filter(|_| lo <= hi).all(|f| match (v.box_at(f), o.box_at(f)) {
            (Some(a), Some(b)) => clear_of(a, b, gap),
            _ => true,
        })
    })
}

fn unit_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Option<Vec<f64>> {
    if dim == 0 {
        return None;
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return Some(v.into_iter().map(|x| x / n).collect());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTruth {
    pub line: String,
    pub class: ClassLabel,
    pub direction: CrossingSign,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenTruth {
    pub start_ts_ms: i64,
    pub end_ts_ms: i64,
}

/// A queue peak on one day: minutes `[start_minute, end_minute)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakTruth {
    pub day: i64,
    pub start_minute: u32,
    pub end_minute: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub tracks: Vec<Track>,
    pub counts: Vec<CountTruth>,
    pub anomalies: Vec<AnomalyEvent>,
    pub frozen: Vec<FrozenTruth>,
    /// Exact pixel length behind every emitted queue sample.
    pub queue: Vec<QueueSample>,
    pub peaks: Vec<PeakTruth>,
}

impl GroundTruth {
    pub fn count(&self, line: &str) -> u64 {
        self.counts.iter().filter(|c| c.line == line).map(|c| c.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub frames: Vec<FrameDetections>,
    pub queue_samples: Vec<QueueSample>,
    pub queue_masks: Vec<QueueMaskSample>,
    pub truth: GroundTruth,
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SimulatorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lanes: Vec<Lane> = cfg.lanes.iter().map(Lane::new).collect();
    let duration = cfg.duration_s;

    let mut admitted: Vec<Vehicle> = Vec::new();
    let mut stall_of: Vec<Option<StallConfig>> = Vec::new();
    for st in &cfg.stalls {
        let lane = &lanes[st.lane];
        let s_stop = 0.5 * lane.length();
        let v = Vehicle {
            class: ClassLabel::Car,
            t0: st.start_s - s_stop / lane.speed,
            stall: Some(Stall { start_s: st.start_s, duration_s: st.duration_s }),
            first_frame: 0,
            boxes: Vec::new(),
        };
        if let Some(v) = render(cfg, lane, v) {
            admitted.push(v);
            stall_of.push(Some(*st));
        }
    }
    for (li, lane_cfg) in cfg.lanes.iter().enumerate() {
        for (&class, &rate) in &lane_cfg.spawn_rates {
            if rate <= 0.0 {
                continue;
            }
            let gap = Exp::new(rate / 60.0).map_err(|e| SimulatorError::Validation(e.to_string()))?;
            let mut t = gap.sample(&mut rng);
            while t < duration {
                let v = Vehicle { class, t0: t, stall: None, first_frame: 0, boxes: Vec::new() };
                if let Some(v) = render(cfg, &lanes[li], v) {
                    if compatible(&v, &admitted, cfg.min_gap_px) {
                        admitted.push(v);
                        stall_of.push(None);
                    }
                }
                t += gap.sample(&mut rng);
            }
        }
    }

    // Identities follow order of first appearance, then admission order.
    let mut order: Vec<usize> = (0..admitted.len()).collect();
    order.sort_by_key(|&i| (admitted[i].first_frame, i));
    let embeddings: Vec<Option<Vec<f64>>> =
        order.iter().map(|_| unit_embedding(&mut rng, cfg.embedding_dim)).collect();

    let [lo, hi] = cfg.noise.score_range;
    let n = cfg.frame_count();
    let mut frames: Vec<FrameDetections> = Vec::with_capacity(n as usize);
    let mut tracks: BTreeMap<u64, Track> = BTreeMap::new();
    let frozen_at = |t: f64| cfg.frozen_windows.iter().any(|f| t >= f.start_s && t < f.start_s + f.duration_s);
    let mut ids: Vec<u64> = Vec::new();
    for i in 0..n {
        let ts = cfg.frame_ts_ms(i);
        let frame = match frames.last() {
            // A frozen frame repeats the previous one verbatim, digest included.
            Some(prev) if frozen_at(cfg.frame_time_s(i)) => {
                let mut f = prev.clone();
                f.frame_index = i;
                f.timestamp_ms = ts;
                for d in &mut f.detections {
                    d.frame_index = i;
                    d.timestamp_ms = ts;
                }
                f
            }
            _ => {
                ids.clear();
                let mut f = FrameDetections::empty(cfg.camera_id.clone(), i, ts);
                f.frame_digest = Some(splitmix64(cfg.seed ^ i.wrapping_mul(0xA076_1D64_78BD_642F)));
                for (k, &vi) in order.iter().enumerate() {
                    if let Some(b) = admitted[vi].box_at(i) {
                        let score = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                        let mut d = Detection::new(i, ts, admitted[vi].class, *b, score);
                        d.embedding = embeddings[k].clone();
                        f.detections.push(d);
                        ids.push(k as u64 + 1);
                    }
                }
                f
            }
        };
        for (&id, d) in ids.iter().zip(&frame.detections) {
            match tracks.get_mut(&id) {
                Some(t) => t.detections.push(d.clone()),
                None => {
                    tracks.insert(id, Track::new(id, d.clone()));
                }
            }
        }
        frames.push(frame);
    }
    let mut gt_tracks: Vec<Track> = tracks.into_values().collect();
    for t in &mut gt_tracks {
        t.state = TrackState::Finished;
    }

    let mut tally = CountTally::new();
    for t in &gt_tracks {
        tally.add_track(t, &cfg.counting_lines);
    }
    let counts = tally
        .counts()
        .iter()
        .map(|(k, &count)| CountTruth { line: k.line.clone(), class: k.class, direction: k.sign, count })
        .collect();

    let mut anomalies = Vec::new();
    for (k, &vi) in order.iter().enumerate() {
        let Some(st) = stall_of[vi] else { continue };
        let lane = &lanes[st.lane];
        let (p, _) = lane.at(0.5 * lane.length());
        let start = cfg.start_ts_ms + (st.start_s * 1000.0).round() as i64;
        let end = cfg.start_ts_ms + ((st.start_s + st.duration_s) * 1000.0).round() as i64;
        anomalies.push(AnomalyEvent {
            camera_id: cfg.camera_id.clone(),
            track_id: k as u64 + 1,
            location: Point2::new(p[0], p[1]),
            direction: Some(lane.direction),
            start_ts_ms: start,
            end_ts_ms: Some(end),
            last_seen_ts_ms: end,
            status: AnomalyStatus::Confirmed,
            rejection_reason: None,
        });
    }
    anomalies.sort_by_key(|a| (a.start_ts_ms, a.track_id));

    let frozen = cfg
        .frozen_windows
        .iter()
        .map(|f| FrozenTruth {
            start_ts_ms: cfg.start_ts_ms + (f.start_s * 1000.0).round() as i64,
            end_ts_ms: cfg.start_ts_ms + ((f.start_s + f.duration_s) * 1000.0).round() as i64,
        })
        .collect();

    let noisy = inject_noise(&frames, &cfg.noise, cfg.seed.wrapping_add(1));
    let mut scenario = Scenario {
        frames: noisy,
        queue_samples: Vec::new(),
        queue_masks: Vec::new(),
        truth: GroundTruth { tracks: gt_tracks, counts, anomalies, frozen, ..Default::default() },
    };
    if let Some(q) = &cfg.queue_profile {
        generate_queue(cfg, q, &mut scenario)?;
    }
    Ok(scenario)
}

fn generate_queue(cfg: &ScenarioConfig, q: &QueueProfile, out: &mut Scenario) -> Result<(), SimulatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5155_4555_4551_5545);
    let noise = Normal::new(0.0, q.noise_sigma_px).map_err(|e| SimulatorError::Validation(e.to_string()))?;
    let first_day = day_of(cfg.start_ts_ms);
    let step_ms = q.sample_interval_s as i64 * 1000;
    for d in 0..q.days {
        for p in &q.peaks {
            if p.days.as_ref().is_none_or(|ds| ds.contains(&d)) {
                out.truth.peaks.push(PeakTruth {
                    day: first_day + d as i64,
                    start_minute: p.start_minute,
                    end_minute: p.end_minute,
                });
            }
        }
        let day_start = (first_day + d as i64) * MS_PER_DAY;
        let mut ts = day_start;
        while ts < day_start + MS_PER_DAY {
            let minute = ((ts - day_start) / MS_PER_MINUTE) as u32;
            let phase = std::f64::consts::TAU * minute as f64 / 1440.0;
            let mut pl = q.baseline_px - q.diurnal_amplitude_px * phase.cos() + noise.sample(&mut rng);
            for p in &q.peaks {
                let on_day = p.days.as_ref().is_none_or(|ds| ds.contains(&d));
                if on_day && (p.start_minute..p.end_minute).contains(&minute) {
                    pl += p.extra_px;
                }
            }
            let pl = pl.max(0.0);
            let mask_id = format!("{}-{ts}", cfg.camera_id);
            match q.masks {
                None => {
                    let s = QueueSample { camera_id: cfg.camera_id.clone(), timestamp_ms: ts, pixel_length: pl, mask_id: None };
                    out.truth.queue.push(s.clone());
                    out.queue_samples.push(s);
                }
                Some(m) => {
                    let (mask, exact) = rectangle_mask(&mut rng, pl, m);
                    out.truth.queue.push(QueueSample {
                        camera_id: cfg.camera_id.clone(),
                        timestamp_ms: ts,
                        pixel_length: exact,
                        mask_id: Some(mask_id.clone()),
                    });
                    out.queue_masks.push(QueueMaskSample {
                        camera_id: cfg.camera_id.clone(),
                        timestamp_ms: ts,
                        mask,
                        width: m.image_width,
                        height: m.image_height,
                        mask_id: Some(mask_id),
                    });
                }
            }
            ts += step_ms;
        }
    }
    Ok(())
}

/// Axis-aligned run-length rectangle roughly `pl` pixels long, with its exact
/// pixel-center diameter.
pub fn rectangle_mask_exact(length_px: u32, m: MaskOutput, vertical: bool, origin: (u32, u32)) -> (MaskShape, f64) {
    let t = m.thickness_px;
    let (along, across) = (length_px.max(1), t);
    let (x0, y0) = origin;
    let runs = if vertical {
        (y0..y0 + along).map(|r| [r, x0, across]).collect()
    } else {
        (y0..y0 + across).map(|r| [r, x0, along]).collect()
    };
    let exact = (((along - 1) as f64).powi(2) + ((across - 1) as f64).powi(2)).sqrt();
    (MaskShape::RunLength(runs), exact)
}

fn rectangle_mask(rng: &mut ChaCha8Rng, pl: f64, m: MaskOutput) -> (MaskShape, f64) {
    let vertical = rng.random_bool(0.5);
    let limit = if vertical { m.image_height } else { m.image_width };
    let along = ((pl.round() as u32) + 1).clamp(1, limit);
    let (span_x, span_y) = if vertical { (m.thickness_px, along) } else { (along, m.thickness_px) };
    let x0 = rng.random_range(0..=m.image_width - span_x);
    let y0 = rng.random_range(0..=m.image_height - span_y);
    rectangle_mask_exact(along, m, vertical, (x0, y0))
}

/// Drops, jitters and duplicates detections independently, deterministically per seed.
///
/// Per detection: dropped with `dropout_prob`; otherwise its center is jittered
/// by N(0, sigma) on each axis, and with `duplicate_prob` a copy shifted along one
/// axis by at most `size * (1 - m) / (1 + m)` is added, which keeps the pair's
/// IOU at or above `m = duplicate_iou_min`.
pub fn inject_noise(frames: &[FrameDetections], noise: &NoiseConfig, seed: u64) -> Vec<FrameDetections> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.center_jitter_sigma_px.max(0.0)).ok();
    let m = noise.duplicate_iou_min;
    frames
        .iter()
        .map(|frame| {
            let mut out = FrameDetections { detections: Vec::with_capacity(frame.detections.len()), ..frame.clone() };
            for d in &frame.detections {
                if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                    continue;
                }
                let mut d = d.clone();
                if noise.center_jitter_sigma_px > 0.0 {
                    if let Some(j) = jitter {
                        d.bbox = d.bbox.translated(j.sample(&mut rng), j.sample(&mut rng));
                    }
                }
                let dup = (noise.duplicate_prob > 0.0 && rng.random_bool(noise.duplicate_prob)).then(|| {
                    let horizontal = rng.random_bool(0.5);
                    let size = if horizontal { d.bbox.w } else { d.bbox.h };
                    let max_shift = size * (1.0 - m) / (1.0 + m);
                    let shift = rng.random_range(0.0..=max_shift) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let mut c = d.clone();
                    c.bbox = if horizontal { d.bbox.translated(shift, 0.0) } else { d.bbox.translated(0.0, shift) };
                    let [lo, hi] = noise.score_range;
                    c.score = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                    c
                });
                out.detections.push(d);
                out.detections.extend(dup);
            }
            out
        })
        .collect()
}

type BoxRow = (u64, i64, f64, f64, f64, f64, f64);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TruthRecord {
    Track { track_id: u64, class: ClassLabel, boxes: Vec<BoxRow> },
    Count(CountTruth),
    Anomaly(AnomalyEvent),
    Frozen(FrozenTruth),
    Queue { cam: String, ts_ms: i64, pl: f64, #[serde(default, skip_serializing_if = "Option::is_none")] mask_id: Option<String> },
    Peak(PeakTruth),
}

/// Writes ground truth as one tagged JSON object per line.
pub fn write_ground_truth<W: Write>(out: &mut W, gt: &GroundTruth) -> Result<(), SimulatorError> {
    let mut emit = |r: TruthRecord| -> Result<(), SimulatorError> {
        serde_json::to_writer(&mut *out, &r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    for t in &gt.tracks {
        let boxes = t
            .detections
            .iter()
            .map(|d| (d.frame_index, d.timestamp_ms, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score))
            .collect();
        emit(TruthRecord::Track { track_id: t.track_id, class: t.majority_class(), boxes })?;
    }
    for c in &gt.counts {
        emit(TruthRecord::Count(c.clone()))?;
    }
    for a in &gt.anomalies {
        emit(TruthRecord::Anomaly(a.clone()))?;
    }
    for f in &gt.frozen {
        emit(TruthRecord::Frozen(*f))?;
    }
    for q in &gt.queue {
        emit(TruthRecord::Queue { cam: q.camera_id.clone(), ts_ms: q.timestamp_ms, pl: q.pixel_length, mask_id: q.mask_id.clone() })?;
    }
    for p in &gt.peaks {
        emit(TruthRecord::Peak(*p))?;
    }
    Ok(())
}

pub fn read_ground_truth<R: BufRead>(input: R) -> Result<GroundTruth, SimulatorError> {
    let mut gt = GroundTruth::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SimulatorError::Parse { line: i + 1, msg };
        match serde_json::from_str(&line).map_err(|e| err(e.to_string()))? {
            TruthRecord::Track { track_id, class, boxes } => {
                let mut dets = boxes.into_iter().map(|(f, ts, x, y, w, h, score)| {
                    BBox::new(x, y, w, h).map(|b| Detection::new(f, ts, class, b, score))
                });
                let first = dets.next().ok_or_else(|| err("track without boxes".into()))?;
                let mut t = Track::new(track_id, first.map_err(|e| err(e.to_string()))?);
                for d in dets {
                    t.detections.push(d.map_err(|e| err(e.to_string()))?);
                }
                t.state = TrackState::Finished;
                gt.tracks.push(t);
            }
            TruthRecord::Count(c) => gt.counts.push(c),
            TruthRecord::Anomaly(a) => gt.anomalies.push(a),
            TruthRecord::Frozen(f) => gt.frozen.push(f),
            TruthRecord::Queue { cam, ts_ms, pl, mask_id } => {
                gt.queue.push(QueueSample { camera_id: cam, timestamp_ms: ts_ms, pixel_length: pl, mask_id })
            }
            TruthRecord::Peak(p) => gt.peaks.push(p),
        }
    }
    Ok(gt)
}

/// Two-lane freeway crossing a 1280x720 image horizontally, one lane per direction.
///
/// Speeds keep per-frame motion at 10 fps well under a third of a car length,
/// so consecutive boxes of one vehicle overlap with IOU above 0.5.
pub fn freeway_scenario(seed: u64, duration_s: f64, rate_per_min: f64) -> ScenarioConfig {
    let rates = |r: f64| BTreeMap::from([(ClassLabel::Car, r), (ClassLabel::Truck, r / 4.0)]);
    ScenarioConfig {
        seed,
        duration_s,
        lanes: vec![
            LaneConfig {
                polyline: vec![[0.0, 300.0], [1280.0, 300.0]],
                direction: Direction::E,
                speed_px_s: 50.0,
                spawn_rates: rates(rate_per_min),
            },
            LaneConfig {
                polyline: vec![[1280.0, 420.0], [0.0, 420.0]],
                direction: Direction::W,
                speed_px_s: 45.0,
                spawn_rates: rates(rate_per_min),
            },
        ],
        counting_lines: vec![CountingLine::new("mid", [640.0, 200.0], [640.0, 520.0], Direction::E)],
        ..Default::default()
    }
}

/// Four approaches through a 1280x720 image: east/west and north/south.
pub fn intersection_scenario(seed: u64, duration_s: f64, rate_per_min: f64) -> ScenarioConfig {
    let mut cfg = freeway_scenario(seed, duration_s, rate_per_min);
    let rates = BTreeMap::from([(ClassLabel::Car, rate_per_min)]);
    cfg.lanes.push(LaneConfig {
        polyline: vec![[500.0, 0.0], [500.0, 720.0]],
        direction: Direction::S,
        speed_px_s: 40.0,
        spawn_rates: rates.clone(),
    });
    cfg.lanes.push(LaneConfig {
        polyline: vec![[780.0, 720.0], [780.0, 0.0]],
        direction: Direction::N,
        speed_px_s: 40.0,
        spawn_rates: rates,
    });
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou_unchecked;

    #[test]
    fn zero_rates_give_empty_output() {
        let mut cfg = freeway_scenario(1, 30.0, 0.0);
        cfg.lanes.iter_mut().for_each(|l| l.spawn_rates.clear());
        let s = generate_scenario(&cfg).unwrap();
        assert!(s.frames.iter().all(|f| f.detections.is_empty()));
        assert!(s.truth.tracks.is_empty() && s.truth.counts.is_empty() && s.truth.anomalies.is_empty());
    }

    #[test]
    fn single_vehicle_counted_once() {
        let cfg = ScenarioConfig {
            duration_s: 20.0,
            lanes: vec![LaneConfig {
                polyline: vec![[0.0, 100.0], [400.0, 100.0]],
                direction: Direction::E,
                speed_px_s: 50.0,
                spawn_rates: BTreeMap::new(),
            }],
            stalls: vec![StallConfig { lane: 0, start_s: 2.0, duration_s: 1.0 }],
            counting_lines: vec![CountingLine::new("l", [300.0, 0.0], [300.0, 200.0], Direction::E)],
            ..Default::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        assert_eq!(s.truth.tracks.len(), 1);
        assert_eq!(s.truth.count("l"), 1);
    }

    #[test]
    fn stall_truth_starts_at_stall() {
        let mut cfg = freeway_scenario(3, 180.0, 2.0);
        cfg.stalls.push(StallConfig { lane: 0, start_s: 60.0, duration_s: 45.0 });
        let s = generate_scenario(&cfg).unwrap();
        assert_eq!(s.truth.anomalies.len(), 1);
        assert_eq!(s.truth.anomalies[0].start_ts_ms, 60_000);
        let t = &s.truth.tracks[s.truth.anomalies[0].track_id as usize - 1];
        let at = |ms: i64| t.detections.iter().find(|d| d.timestamp_ms == ms).unwrap().centroid();
        assert!((at(70_000).x - at(90_000).x).abs() < 0.1);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = freeway_scenario(11, 60.0, 6.0);
        assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
        let other = generate_scenario(&freeway_scenario(12, 60.0, 6.0)).unwrap();
        assert_ne!(generate_scenario(&cfg).unwrap().frames, other.frames);
    }

    #[test]
    fn frozen_window_repeats_frames() {
        let mut cfg = freeway_scenario(5, 60.0, 6.0);
        cfg.frozen_windows.push(FrozenWindow { start_s: 10.0, duration_s: 5.0 });
        let s = generate_scenario(&cfg).unwrap();
        let before = &s.frames[99];
        for f in &s.frames[100..150] {
            assert_eq!(f.frame_digest, before.frame_digest);
            let boxes: Vec<_> = f.detections.iter().map(|d| d.bbox).collect();
            assert_eq!(boxes, before.detections.iter().map(|d| d.bbox).collect::<Vec<_>>());
        }
        assert_ne!(s.frames[150].frame_digest, before.frame_digest);
    }

    #[test]
    fn noise_examples() {
        let s = generate_scenario(&freeway_scenario(2, 60.0, 8.0)).unwrap();
        assert_eq!(inject_noise(&s.frames, &NoiseConfig::default(), 9), s.frames);

        let all_drop = NoiseConfig { dropout_prob: 1.0, ..Default::default() };
        assert!(inject_noise(&s.frames, &all_drop, 9).iter().all(|f| f.detections.is_empty()));

        let dup = NoiseConfig { duplicate_prob: 1.0, duplicate_iou_min: 0.7, ..Default::default() };
        for (orig, noisy) in s.frames.iter().zip(inject_noise(&s.frames, &dup, 9)) {
            assert_eq!(noisy.detections.len(), 2 * orig.detections.len());
            for pair in noisy.detections.chunks(2) {
                assert!(iou_unchecked(&pair[0].bbox, &pair[1].bbox) >= 0.7 - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = freeway_scenario(1, 30.0, 1.0);
        cfg.stalls.push(StallConfig { lane: 0, start_s: 20.0, duration_s: 20.0 });
        assert!(generate_scenario(&cfg).is_err());
        let mut cfg = freeway_scenario(1, 30.0, 1.0);
        cfg.lanes[0].spawn_rates.insert(ClassLabel::Bus, -1.0);
        assert!(generate_scenario(&cfg).is_err());
    }

    #[test]
    fn truth_round_trip() {
        let mut cfg = freeway_scenario(4, 120.0, 4.0);
        cfg.stalls.push(StallConfig { lane: 1, start_s: 30.0, duration_s: 40.0 });
        cfg.frozen_windows.push(FrozenWindow { start_s: 90.0, duration_s: 5.0 });
        cfg.queue_profile = Some(QueueProfile { days: 1, sample_interval_s: 3600, ..Default::default() });
        let s = generate_scenario(&cfg).unwrap();
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &s.truth).unwrap();
        let back = read_ground_truth(buf.as_slice()).unwrap();
        assert_eq!(back.tracks.len(), s.truth.tracks.len());
        for (a, b) in back.tracks.iter().zip(&s.truth.tracks) {
            assert_eq!(a.detections.len(), b.detections.len());
            assert_eq!(a.last().bbox, b.last().bbox);
        }
        assert_eq!(back.counts, s.truth.counts);
        assert_eq!(back.anomalies, s.truth.anomalies);
        assert_eq!(back.queue, s.truth.queue);
    }
}
