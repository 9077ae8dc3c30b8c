//! One camera's streaming pipeline: dedup → tracker → {anomaly, road type, counting}; queue samples → severity.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use trafficmon::anomaly::{AnomalyConfig, AnomalyDetector, AnomalyEvent};
use trafficmon::counting::{counting_step, dedup_detections, CountTally, CrossingSign};
use trafficmon::ingest::{CameraRecord, FrameDetections, WeatherTag};
use trafficmon::motion::{MotionConfig, RoadType, RoadTypeEstimator};
use trafficmon::queue::{
    classify_severity, compute_thresholds, day_of, QueueSample, SeverityLevel, SeverityThresholds, ThresholdConfig,
    MS_PER_DAY, MS_PER_MINUTE,
};
use trafficmon::tracking::{TrackEvent, Tracker, TrackerConfig};
use trafficmon::ClassLabel;

use crate::error::ServiceError;

const MS_PER_HOUR: i64 = 60 * MS_PER_MINUTE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub anomaly: AnomalyConfig,
    pub motion: MotionConfig,
    pub thresholds: ThresholdConfig,
    /// Fixed thresholds; when absent they are learned from the camera's own history.
    pub preset_thresholds: Option<SeverityThresholds>,
    /// Same-class boxes overlapping above this IOU are merged before tracking.
    pub dedup_iou: f64,
    /// Days of per-minute queue history kept for threshold learning.
    pub history_days: u32,
    /// Input silence after which a camera is reported stale.
    pub stale_timeout_ms: i64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            anomaly: AnomalyConfig::default(),
            motion: MotionConfig::default(),
            thresholds: ThresholdConfig::default(),
            preset_thresholds: None,
            dedup_iou: 0.5,
            history_days: 28,
            stale_timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueSeverity {
    Unknown,
    Low,
    Medium,
    High,
}

impl From<Option<SeverityLevel>> for QueueSeverity {
    fn from(s: Option<SeverityLevel>) -> Self {
        match s {
            None => QueueSeverity::Unknown,
            Some(SeverityLevel::Low) => QueueSeverity::Low,
            Some(SeverityLevel::Medium) => QueueSeverity::Medium,
            Some(SeverityLevel::High) => QueueSeverity::High,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraStatus {
    pub camera_id: String,
    pub name: String,
    pub last_update_ts: Option<i64>,
    pub queue_severity: QueueSeverity,
    pub mean_pixel_length: Option<f64>,
    pub active_anomalies: usize,
    pub counts_last_hour: BTreeMap<ClassLabel, u64>,
    pub weather_tag: Option<WeatherTag>,
    pub road_type: Option<RoadType>,
    pub stale: bool,
}

impl CameraStatus {
    pub fn new(record: &CameraRecord) -> Self {
        Self {
            camera_id: record.camera_id.clone(),
            name: record.name.clone(),
            last_update_ts: None,
            queue_severity: QueueSeverity::Unknown,
            mean_pixel_length: None,
            active_anomalies: 0,
            counts_last_hour: BTreeMap::new(),
            weather_tag: record.weather_tag,
            road_type: record.road_type_override,
            stale: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub line: String,
    pub class: ClassLabel,
    pub direction: CrossingSign,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRef {
    pub track_id: u64,
    pub start_ts_ms: i64,
}

/// Everything one camera produced during one minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteAggregate {
    pub camera_id: String,
    pub minute_start_ts: i64,
    pub mean_pl: Option<f64>,
    pub severity: Option<SeverityLevel>,
    pub counts: Vec<CountEntry>,
    pub anomalies: Vec<AnomalyRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServiceEvent {
    StatusDelta { status: CameraStatus },
    AnomalyAlert { event: AnomalyEvent },
    CountTick { camera_id: String, minute_start_ts: i64, counts: Vec<CountEntry> },
}

impl ServiceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ServiceEvent::StatusDelta { .. } => "status_delta",
            ServiceEvent::AnomalyAlert { .. } => "anomaly_alert",
            ServiceEvent::CountTick { .. } => "count_tick",
        }
    }

    pub fn camera_id(&self) -> &str {
        match self {
            ServiceEvent::StatusDelta { status } => &status.camera_id,
            ServiceEvent::AnomalyAlert { event } => &event.camera_id,
            ServiceEvent::CountTick { camera_id, .. } => camera_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub events: Vec<ServiceEvent>,
    pub aggregates: Vec<MinuteAggregate>,
}

impl PipelineOutput {
    fn extend(&mut self, other: PipelineOutput) {
        self.events.extend(other.events);
        self.aggregates.extend(other.aggregates);
    }
}

#[derive(Debug, Default)]
struct OpenMinute {
    start: i64,
    pl_sum: f64,
    pl_n: usize,
    counts: BTreeMap<(String, ClassLabel, CrossingSign), u64>,
    anomalies: Vec<AnomalyRef>,
}

#[derive(Debug)]
pub struct CameraPipeline {
    record: CameraRecord,
    cfg: PipelineConfig,
    tracker: Tracker,
    detector: AnomalyDetector,
    road: RoadTypeEstimator,
    tally: CountTally,
    counted: usize,
    recent_counts: VecDeque<(i64, ClassLabel)>,
    thresholds: Option<SeverityThresholds>,
    pl_history: VecDeque<QueueSample>,
    learned_day: Option<i64>,
    minute: Option<OpenMinute>,
    last_ts: Option<i64>,
    status: CameraStatus,
}

impl CameraPipeline {
    pub fn new(record: CameraRecord, cfg: PipelineConfig) -> Result<Self, ServiceError> {
        record.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        cfg.thresholds.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let tracker = Tracker::new(cfg.tracker).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let detector = AnomalyDetector::new(record.camera_id.clone(), cfg.anomaly, cfg.motion.min_displacement_px)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(Self {
            status: CameraStatus::new(&record),
            road: RoadTypeEstimator::new(cfg.motion),
            thresholds: cfg.preset_thresholds,
            record,
            cfg,
            tracker,
            detector,
            tally: CountTally::new(),
            counted: 0,
            recent_counts: VecDeque::new(),
            pl_history: VecDeque::new(),
            learned_day: None,
            minute: None,
            last_ts: None,
        })
    }

    pub fn record(&self) -> &CameraRecord {
        &self.record
    }

    pub fn status(&self) -> &CameraStatus {
        &self.status
    }

    pub fn thresholds(&self) -> Option<&SeverityThresholds> {
        self.thresholds.as_ref()
    }

    pub fn alerted_anomalies(&self) -> Vec<&AnomalyEvent> {
        self.detector.alerted()
    }

    pub fn active_anomalies(&self) -> Vec<&AnomalyEvent> {
        self.detector.active()
    }

    fn road_type(&self) -> RoadType {
        self.record.road_type_override.unwrap_or_else(|| self.road.road_type())
    }

    /// Advances the clock, closing the open minute when `ts` falls past it.
    fn advance(&mut self, ts: i64) -> Result<PipelineOutput, ServiceError> {
        if let Some(last) = self.last_ts {
            if ts < last {
                return Err(ServiceError::BadRequest(format!(
                    "camera {}: timestamp {ts} precedes {last}",
                    self.record.camera_id
                )));
            }
        }
        let mut out = PipelineOutput::default();
        let minute_start = ts.div_euclid(MS_PER_MINUTE) * MS_PER_MINUTE;
        if self.minute.as_ref().is_some_and(|m| m.start != minute_start) {
            out.extend(self.close_minute());
        }
        if self.minute.is_none() {
            self.minute = Some(OpenMinute { start: minute_start, ..Default::default() });
        }
        if self.learned_day != Some(day_of(ts)) {
            self.relearn_thresholds(ts);
        }
        self.last_ts = Some(ts);
        self.status.last_update_ts = Some(ts);
        self.status.stale = false;
        Ok(out)
    }

    /// Recomputes learned thresholds once per day from the trailing per-minute history.
    fn relearn_thresholds(&mut self, ts: i64) {
        self.learned_day = Some(day_of(ts));
        if self.cfg.preset_thresholds.is_some() {
            return;
        }
        let horizon = ts - self.cfg.history_days as i64 * MS_PER_DAY;
        while self.pl_history.front().is_some_and(|s| s.timestamp_ms < horizon) {
            self.pl_history.pop_front();
        }
        let history: Vec<QueueSample> = self.pl_history.iter().cloned().collect();
        if let Ok(th) = compute_thresholds(&history, &self.cfg.thresholds) {
            self.thresholds = Some(th);
        }
    }

    fn close_minute(&mut self) -> PipelineOutput {
        let Some(m) = self.minute.take() else {
            return PipelineOutput::default();
        };
        let mean_pl = (m.pl_n > 0).then(|| m.pl_sum / m.pl_n as f64);
        let severity = mean_pl.and_then(|pl| self.thresholds.as_ref().map(|th| classify_severity(pl, th)));
        if let Some(pl) = mean_pl {
            self.pl_history.push_back(QueueSample {
                camera_id: self.record.camera_id.clone(),
                timestamp_ms: m.start,
                pixel_length: pl,
                mask_id: None,
            });
            self.status.mean_pixel_length = Some(pl);
            self.status.queue_severity = severity.into();
        }
        let counts: Vec<CountEntry> = m
            .counts
            .into_iter()
            .map(|((line, class, direction), count)| CountEntry { line, class, direction, count })
            .collect();
        let horizon = m.start + MS_PER_MINUTE - MS_PER_HOUR;
        while self.recent_counts.front().is_some_and(|&(t, _)| t < horizon) {
            self.recent_counts.pop_front();
        }
        let mut per_class = BTreeMap::new();
        for &(_, c) in &self.recent_counts {
            *per_class.entry(c).or_default() += 1;
        }
        self.status.counts_last_hour = per_class;
        self.status.active_anomalies = self.detector.active().len();

        let mut out = PipelineOutput::default();
        if !counts.is_empty() {
            out.events.push(ServiceEvent::CountTick {
                camera_id: self.record.camera_id.clone(),
                minute_start_ts: m.start,
                counts: counts.clone(),
            });
        }
        out.events.push(ServiceEvent::StatusDelta { status: self.status.clone() });
        out.aggregates.push(MinuteAggregate {
            camera_id: self.record.camera_id.clone(),
            minute_start_ts: m.start,
            mean_pl,
            severity,
            counts,
            anomalies: m.anomalies,
        });
        out
    }

    fn absorb_track_events(&mut self, events: &[TrackEvent]) {
        for ev in events {
            if let TrackEvent::Finished(t) = ev {
                self.road.observe(t);
            }
        }
        self.tally = counting_step(std::mem::take(&mut self.tally), events, &self.record.counting_lines);
        let fresh = &self.tally.crossings()[self.counted..];
        if fresh.is_empty() {
            return;
        }
        let minute = self.minute.get_or_insert_with(Default::default);
        for c in fresh {
            *minute.counts.entry((c.line.clone(), c.class, c.sign)).or_default() += 1;
            self.recent_counts.push_back((c.ts_ms, c.class));
        }
        self.counted = self.tally.crossings().len();
    }

    pub fn push_frame(&mut self, frame: &FrameDetections) -> Result<PipelineOutput, ServiceError> {
        if frame.camera_id != self.record.camera_id {
            return Err(ServiceError::BadRequest(format!(
                "frame for camera {} sent to {}",
                frame.camera_id, self.record.camera_id
            )));
        }
        let mut out = self.advance(frame.timestamp_ms)?;
        let frame = dedup_detections(frame, self.cfg.dedup_iou);
        let events = self.tracker.step(&frame).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        self.detector.observe_frame(&frame, self.tracker.state().active_tracks(), &events);
        self.absorb_track_events(&events);
        self.road.expire(frame.timestamp_ms);
        self.status.road_type = Some(self.road_type());
        out.extend(self.poll_anomalies());
        Ok(out)
    }

    fn poll_anomalies(&mut self) -> PipelineOutput {
        let mut out = PipelineOutput::default();
        let before = self.status.active_anomalies;
        for ev in self.detector.poll_confirmations(self.road_type()) {
            if let Some(m) = self.minute.as_mut() {
                m.anomalies.push(AnomalyRef { track_id: ev.track_id, start_ts_ms: ev.start_ts_ms });
            }
            out.events.push(ServiceEvent::AnomalyAlert { event: ev });
        }
        self.status.active_anomalies = self.detector.active().len();
        if self.status.active_anomalies != before {
            out.events.push(ServiceEvent::StatusDelta { status: self.status.clone() });
        }
        out
    }

    pub fn push_queue_sample(&mut self, sample: &QueueSample) -> Result<PipelineOutput, ServiceError> {
        if sample.camera_id != self.record.camera_id {
            return Err(ServiceError::BadRequest(format!(
                "queue sample for camera {} sent to {}",
                sample.camera_id, self.record.camera_id
            )));
        }
        if !(sample.pixel_length.is_finite() && sample.pixel_length >= 0.0) {
            return Err(ServiceError::BadRequest(format!("invalid pixel length {}", sample.pixel_length)));
        }
        let out = self.advance(sample.timestamp_ms)?;
        let m = self.minute.as_mut().expect("advance opens a minute");
        m.pl_sum += sample.pixel_length;
        m.pl_n += 1;
        Ok(out)
    }

    /// Sets the stale flag; returns a status delta when it changed.
    pub fn set_stale(&mut self, stale: bool) -> Option<ServiceEvent> {
        if self.status.stale == stale {
            return None;
        }
        self.status.stale = stale;
        Some(ServiceEvent::StatusDelta { status: self.status.clone() })
    }

    /// True when the data clock has moved `stale_timeout_ms` past the last input.
    pub fn is_stale_at(&self, now_ms: i64) -> bool {
        self.last_ts.is_some_and(|t| now_ms - t > self.cfg.stale_timeout_ms)
    }

    /// Ends the stream: finishes tracks and closes the open minute.
    pub fn finish(&mut self) -> PipelineOutput {
        let events = self.tracker.finish();
        // Feed the terminal events through the detector with an empty frame so open runs close.
        if let Some(ts) = self.last_ts {
            let empty = FrameDetections::empty(self.record.camera_id.clone(), u64::MAX, ts);
            self.detector.observe_frame(&empty, std::iter::empty(), &events);
        }
        self.absorb_track_events(&events);
        let mut out = self.poll_anomalies();
        out.extend(self.close_minute());
        out
    }
}
