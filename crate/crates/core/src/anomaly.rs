//! Stationary-vehicle anomalies.
//!
//! A track whose trailing mean speed stays under `candidate_speed_px_s` for
//! `candidate_window_s` opens a candidate. Candidates are confirmed by road type
//! and then thinned by [`suppress_and_merge`]. Runs made only of exact-zero
//! speeds are flagged as frozen video (or plain zero speed) and never confirm:
//! a real stall still sways by a fraction of a pixel.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::ingest::FrameDetections;
use crate::motion::{dominant_direction, estimate_speed, MotionConfig, RoadType, RoadTypeEstimator};
use crate::tracking::{TrackEvent, Tracker, TrackerConfig, TrackingError};
use crate::types::{Direction, Track};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("invalid anomaly config: {0}")]
    Config(String),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error("anomaly export line {line}: {msg}")]
    Export { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionPolicy {
    /// Anomalies on intersections are rejected outright.
    Reject,
    /// Anomalies on intersections confirm after `confirm_intersection_s`.
    #[serde(rename = "confirm_60s")]
    Confirm60s,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub candidate_speed_px_s: f64,
    pub candidate_window_s: f64,
    pub confirm_freeway_s: f64,
    pub confirm_intersection_s: f64,
    pub intersection_policy: IntersectionPolicy,
    pub merge_radius_px: f64,
    pub one_per_side_window_min: f64,
    /// Trailing window for each speed sample.
    pub speed_window_ms: i64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            candidate_speed_px_s: 0.5,
            candidate_window_s: 15.0,
            confirm_freeway_s: 30.0,
            confirm_intersection_s: 60.0,
            intersection_policy: IntersectionPolicy::Reject,
            merge_radius_px: 50.0,
            one_per_side_window_min: 15.0,
            speed_window_ms: 1000,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if !(self.candidate_window_s <= self.confirm_freeway_s && self.confirm_freeway_s <= self.confirm_intersection_s) {
            return Err(AnomalyError::Config(
                "need candidate_window_s <= confirm_freeway_s <= confirm_intersection_s".into(),
            ));
        }
        if !(self.candidate_speed_px_s > 0.0) || self.merge_radius_px < 0.0 || self.speed_window_ms <= 0 {
            return Err(AnomalyError::Config("speed threshold, merge radius and speed window must be positive".into()));
        }
        Ok(())
    }

    fn candidate_window_ms(&self) -> i64 {
        (self.candidate_window_s * 1000.0).round() as i64
    }

    fn side_window_ms(&self) -> i64 {
        (self.one_per_side_window_min * 60_000.0).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyStatus {
    Candidate,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    FrozenFrame,
    Intersection,
    Merged,
    ZeroSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub camera_id: String,
    pub track_id: u64,
    pub location: Point2<f64>,
    pub direction: Option<Direction>,
    pub start_ts_ms: i64,
    /// `None` while the vehicle is still stationary.
    pub end_ts_ms: Option<i64>,
    /// Latest time the stationary run was observed.
    pub last_seen_ts_ms: i64,
    pub status: AnomalyStatus,
    pub rejection_reason: Option<RejectionReason>,
}

impl AnomalyEvent {
    pub fn stationary_ms(&self) -> i64 {
        self.end_ts_ms.unwrap_or(self.last_seen_ts_ms) - self.start_ts_ms
    }

    pub fn is_open(&self) -> bool {
        self.end_ts_ms.is_none()
    }

    fn is_false_detection(&self) -> bool {
        matches!(self.rejection_reason, Some(RejectionReason::FrozenFrame | RejectionReason::ZeroSpeed))
    }
}

/// One speed observation of one track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub track_id: u64,
    pub ts_ms: i64,
    pub speed_px_s: f64,
    pub location: Point2<f64>,
    pub direction: Option<Direction>,
    /// The frame repeated the previous frame's digest.
    pub frozen_frame: bool,
}

#[derive(Debug, Clone)]
struct SlowRun {
    start_ts: i64,
    location: Point2<f64>,
    all_zero: bool,
    all_frozen: bool,
    event: Option<usize>,
}

/// Streaming form of [`update_candidates`].
#[derive(Debug, Clone)]
pub struct CandidateTracker {
    camera_id: String,
    cfg: AnomalyConfig,
    runs: HashMap<u64, SlowRun>,
    events: Vec<AnomalyEvent>,
}

impl CandidateTracker {
    pub fn new(camera_id: impl Into<String>, cfg: AnomalyConfig) -> Self {
        Self { camera_id: camera_id.into(), cfg, runs: HashMap::new(), events: Vec::new() }
    }

    /// Feeds one sample; returns the index of a candidate opened or updated by it.
    pub fn observe(&mut self, s: &SpeedSample) -> Option<usize> {
        if s.speed_px_s < self.cfg.candidate_speed_px_s {
            let run = self.runs.entry(s.track_id).or_insert(SlowRun {
                start_ts: s.ts_ms,
                location: s.location,
                all_zero: true,
                all_frozen: true,
                event: None,
            });
            run.all_zero &= s.speed_px_s == 0.0;
            run.all_frozen &= s.frozen_frame;
            let reason = match (run.all_zero, run.all_frozen) {
                (true, true) => Some(RejectionReason::FrozenFrame),
                (true, false) => Some(RejectionReason::ZeroSpeed),
                _ => None,
            };
            match run.event {
                Some(i) => {
                    let ev = &mut self.events[i];
                    ev.last_seen_ts_ms = s.ts_ms;
                    if ev.status == AnomalyStatus::Candidate {
                        ev.rejection_reason = reason;
                    }
                    if ev.direction.is_none() {
                        ev.direction = s.direction;
                    }
                    Some(i)
                }
                None if s.ts_ms - run.start_ts >= self.cfg.candidate_window_ms() => {
                    self.events.push(AnomalyEvent {
                        camera_id: self.camera_id.clone(),
                        track_id: s.track_id,
                        location: run.location,
                        direction: s.direction,
                        start_ts_ms: run.start_ts,
                        end_ts_ms: None,
                        last_seen_ts_ms: s.ts_ms,
                        status: AnomalyStatus::Candidate,
                        rejection_reason: reason,
                    });
                    run.event = Some(self.events.len() - 1);
                    run.event
                }
                None => None,
            }
        } else {
            let run = self.runs.remove(&s.track_id)?;
            let i = run.event?;
            self.events[i].end_ts_ms = Some(s.ts_ms);
            Some(i)
        }
    }

    /// Closes any open candidate of a track that ended.
    pub fn end_track(&mut self, track_id: u64) -> Option<usize> {
        let run = self.runs.remove(&track_id)?;
        let i = run.event?;
        let ev = &mut self.events[i];
        ev.end_ts_ms = Some(ev.last_seen_ts_ms);
        Some(i)
    }

    pub fn events(&self) -> &[AnomalyEvent] {
        &self.events
    }

    pub fn events_mut(&mut self) -> &mut [AnomalyEvent] {
        &mut self.events
    }

    pub fn into_events(self) -> Vec<AnomalyEvent> {
        self.events
    }
}

/// Candidate events implied by per-track speed samples (time-ordered per track).
pub fn update_candidates(camera_id: &str, samples: &[SpeedSample], cfg: &AnomalyConfig) -> Vec<AnomalyEvent> {
    let mut ct = CandidateTracker::new(camera_id, *cfg);
    for s in samples {
        ct.observe(s);
    }
    let mut events = ct.into_events();
    events.sort_by_key(|e| (e.start_ts_ms, e.track_id));
    events
}

/// Applies the road-type confirmation rule to a candidate.
pub fn confirm(candidate: &AnomalyEvent, road: RoadType, cfg: &AnomalyConfig) -> AnomalyEvent {
    let mut ev = candidate.clone();
    if ev.status != AnomalyStatus::Candidate {
        return ev;
    }
    if let Some(reason) = ev.rejection_reason {
        ev.status = AnomalyStatus::Rejected;
        ev.rejection_reason = Some(reason);
        return ev;
    }
    let stationary_s = ev.stationary_ms() as f64 / 1000.0;
    match (road, cfg.intersection_policy) {
        (RoadType::Freeway, _) => {
            if stationary_s > cfg.confirm_freeway_s {
                ev.status = AnomalyStatus::Confirmed;
            }
        }
        (RoadType::Intersection, IntersectionPolicy::Reject) => {
            ev.status = AnomalyStatus::Rejected;
            ev.rejection_reason = Some(RejectionReason::Intersection);
        }
        (RoadType::Intersection, IntersectionPolicy::Confirm60s) => {
            if stationary_s > cfg.confirm_intersection_s {
                ev.status = AnomalyStatus::Confirmed;
            }
        }
    }
    ev
}

/// Surviving events plus the inputs folded away by [`suppress_and_merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutcome {
    pub kept: Vec<AnomalyEvent>,
    pub dropped: Vec<AnomalyEvent>,
}

/// Drops false detections, merges nearby events and keeps one event per road
/// side within each `one_per_side_window_min` window.
pub fn suppress_and_merge(events: &[AnomalyEvent], cfg: &AnomalyConfig) -> Vec<AnomalyEvent> {
    suppress_and_merge_detailed(events, cfg).kept
}

pub fn suppress_and_merge_detailed(events: &[AnomalyEvent], cfg: &AnomalyConfig) -> MergeOutcome {
    let window = cfg.side_window_ms();
    let mut out = MergeOutcome::default();

    let mut live: Vec<&AnomalyEvent> = Vec::new();
    for ev in events {
        if ev.status == AnomalyStatus::Rejected || ev.is_false_detection() {
            out.dropped.push(ev.clone());
        } else {
            live.push(ev);
        }
    }
    live.sort_by_key(|e| (e.start_ts_ms, e.track_id));

    // Spatial merge into the earliest nearby event.
    let mut merged: Vec<AnomalyEvent> = Vec::new();
    for ev in live {
        let target = merged.iter_mut().find(|s| {
            s.location.distance(&ev.location) <= cfg.merge_radius_px && ev.start_ts_ms - s.start_ts_ms < window
        });
        match target {
            Some(s) => {
                s.end_ts_ms = match (s.end_ts_ms, ev.end_ts_ms) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
                s.last_seen_ts_ms = s.last_seen_ts_ms.max(ev.last_seen_ts_ms);
                if ev.status == AnomalyStatus::Confirmed {
                    s.status = AnomalyStatus::Confirmed;
                }
                let mut gone = ev.clone();
                gone.status = AnomalyStatus::Rejected;
                gone.rejection_reason = Some(RejectionReason::Merged);
                out.dropped.push(gone);
            }
            None => merged.push(ev.clone()),
        }
    }

    // One event per side of the road per window.
    let mut last_kept: BTreeMap<Option<Direction>, i64> = BTreeMap::new();
    for ev in merged {
        match last_kept.get(&ev.direction) {
            Some(&t) if ev.start_ts_ms - t < window => {
                let mut gone = ev;
                gone.status = AnomalyStatus::Rejected;
                gone.rejection_reason = Some(RejectionReason::Merged);
                out.dropped.push(gone);
            }
            _ => {
                last_kept.insert(ev.direction, ev.start_ts_ms);
                out.kept.push(ev);
            }
        }
    }
    out
}

/// Per-camera streaming detector fed with tracker output frame by frame.
#[derive(Debug, Clone)]
pub struct AnomalyDetector {
    cfg: AnomalyConfig,
    min_displacement_px: f64,
    candidates: CandidateTracker,
    prev_digest: Option<u64>,
    alerted: Vec<usize>,
}

impl AnomalyDetector {
    pub fn new(camera_id: impl Into<String>, cfg: AnomalyConfig, min_displacement_px: f64) -> Result<Self, AnomalyError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            min_displacement_px,
            candidates: CandidateTracker::new(camera_id, cfg),
            prev_digest: None,
            alerted: Vec::new(),
        })
    }

    /// Samples the speed of every track observed in this frame.
    pub fn observe_frame<'a, I>(&mut self, frame: &FrameDetections, active: I, events: &[TrackEvent])
    where
        I: IntoIterator<Item = &'a Track>,
    {
        let frozen = matches!((self.prev_digest, frame.frame_digest), (Some(a), Some(b)) if a == b);
        self.prev_digest = frame.frame_digest;
        for track in active {
            if track.last().frame_index != frame.frame_index {
                continue;
            }
            let Ok(speed) = estimate_speed(track, self.cfg.speed_window_ms) else {
                continue;
            };
            self.candidates.observe(&SpeedSample {
                track_id: track.track_id,
                ts_ms: frame.timestamp_ms,
                speed_px_s: speed,
                location: track.last().centroid(),
                direction: dominant_direction(track, self.min_displacement_px),
                frozen_frame: frozen,
            });
        }
        for ev in events {
            match ev {
                TrackEvent::Finished(t) => {
                    self.candidates.end_track(t.track_id);
                }
                TrackEvent::Discarded(id) => {
                    self.candidates.end_track(*id);
                }
                _ => {}
            }
        }
    }

    /// Confirms pending candidates under `road`; returns newly confirmed events
    /// that survive suppression against everything already alerted.
    pub fn poll_confirmations(&mut self, road: RoadType) -> Vec<AnomalyEvent> {
        let mut fresh = Vec::new();
        for i in 0..self.candidates.events().len() {
            let ev = &self.candidates.events()[i];
            if ev.status != AnomalyStatus::Candidate || ev.rejection_reason.is_some() {
                continue;
            }
            let decided = confirm(ev, road, &self.cfg);
            if decided.status != AnomalyStatus::Confirmed {
                continue;
            }
            let mut pool: Vec<AnomalyEvent> =
                self.alerted.iter().map(|&k| self.candidates.events()[k].clone()).collect();
            pool.push(decided.clone());
            let survives = suppress_and_merge(&pool, &self.cfg)
                .iter()
                .any(|k| k.track_id == decided.track_id && k.start_ts_ms == decided.start_ts_ms);
            let slot = &mut self.candidates.events_mut()[i];
            if survives {
                slot.status = AnomalyStatus::Confirmed;
                self.alerted.push(i);
                fresh.push(slot.clone());
            } else {
                slot.status = AnomalyStatus::Rejected;
                slot.rejection_reason = Some(RejectionReason::Merged);
            }
        }
        fresh
    }

    /// Alerted anomalies whose vehicle is still stationary.
    pub fn active(&self) -> Vec<&AnomalyEvent> {
        self.alerted.iter().map(|&i| &self.candidates.events()[i]).filter(|e| e.is_open()).collect()
    }

    pub fn alerted(&self) -> Vec<&AnomalyEvent> {
        self.alerted.iter().map(|&i| &self.candidates.events()[i]).collect()
    }

    pub fn candidates(&self) -> &[AnomalyEvent] {
        self.candidates.events()
    }
}

/// Result of offline anomaly detection over a whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub road_type: RoadType,
    /// Every candidate after confirmation, including rejected ones.
    pub candidates: Vec<AnomalyEvent>,
    /// Confirmed anomalies after suppression and merging.
    pub anomalies: Vec<AnomalyEvent>,
}

/// Runs tracker and candidate detection over a stream, classifies the road from
/// all tracks (unless overridden), then confirms and merges.
pub fn detect_anomalies<'a, I>(
    frames: I,
    tracker_cfg: TrackerConfig,
    cfg: &AnomalyConfig,
    motion: &MotionConfig,
    road_override: Option<RoadType>,
) -> Result<AnomalyReport, AnomalyError>
where
    I: IntoIterator<Item = &'a FrameDetections>,
{
    let mut tracker = Tracker::new(tracker_cfg)?;
    let mut detector = AnomalyDetector::new("", *cfg, motion.min_displacement_px)?;
    let mut camera_id = None;
    let mut road = RoadTypeEstimator::new(MotionConfig { histogram_horizon_ms: i64::MAX, ..*motion });
    for frame in frames {
        camera_id.get_or_insert_with(|| frame.camera_id.clone());
        let events = tracker.step(frame)?;
        detector.observe_frame(frame, tracker.state().active_tracks(), &events);
        for t in tracker.take_finished() {
            road.observe(&t);
        }
    }
    let events = tracker.finish();
    for ev in &events {
        if let TrackEvent::Finished(t) = ev {
            detector.candidates.end_track(t.track_id);
            road.observe(t);
        }
    }
    let road_type = road_override.unwrap_or_else(|| road.road_type());
    let camera_id = camera_id.unwrap_or_default();
    let candidates: Vec<AnomalyEvent> = detector
        .candidates
        .into_events()
        .into_iter()
        .map(|mut e| {
            e.camera_id = camera_id.clone();
            confirm(&e, road_type, cfg)
        })
        .collect();
    let confirmed: Vec<AnomalyEvent> =
        candidates.iter().filter(|e| e.status == AnomalyStatus::Confirmed).cloned().collect();
    let anomalies = suppress_and_merge(&confirmed, cfg);
    Ok(AnomalyReport { road_type, candidates, anomalies })
}

/// Writes one JSON object per event.
pub fn write_anomaly_export<W: Write>(out: &mut W, events: &[AnomalyEvent]) -> Result<(), AnomalyError> {
    for ev in events {
        serde_json::to_writer(&mut *out, ev).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_anomaly_export<R: BufRead>(input: R) -> Result<Vec<AnomalyEvent>, AnomalyError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AnomalyError::Export { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(track_id: u64, from_s: i64, to_s: i64, speed: f64, frozen: bool) -> Vec<SpeedSample> {
        (from_s..=to_s)
            .map(|t| SpeedSample {
                track_id,
                ts_ms: t * 1000,
                speed_px_s: speed,
                location: Point2::new(100.0, 100.0),
                direction: Some(Direction::E),
                frozen_frame: frozen,
            })
            .collect()
    }

    fn event(track_id: u64, start_s: i64, end_s: i64, x: f64, dir: Direction) -> AnomalyEvent {
        AnomalyEvent {
            camera_id: "c".into(),
            track_id,
            location: Point2::new(x, 50.0),
            direction: Some(dir),
            start_ts_ms: start_s * 1000,
            end_ts_ms: Some(end_s * 1000),
            last_seen_ts_ms: end_s * 1000,
            status: AnomalyStatus::Confirmed,
            rejection_reason: None,
        }
    }

    #[test]
    fn sustained_slow_speed_opens_candidate_at_window() {
        let cfg = AnomalyConfig::default();
        let s = samples(1, 0, 40, 0.2, false);
        let mut ct = CandidateTracker::new("c", cfg);
        let opened_at = s.iter().find(|x| ct.observe(x).is_some()).map(|x| x.ts_ms);
        assert_eq!(opened_at, Some(15_000));
        let events = update_candidates("c", &s, &cfg);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].start_ts_ms, 0);
        assert!(events[0].is_open());
        assert_eq!(events[0].last_seen_ts_ms, 40_000);
        assert_eq!(events[0].rejection_reason, None);
    }

    #[test]
    fn short_slow_spell_opens_nothing() {
        let mut s = samples(1, 0, 10, 0.2, false);
        s.extend(samples(1, 11, 30, 5.0, false));
        assert!(update_candidates("c", &s, &AnomalyConfig::default()).is_empty());
    }

    #[test]
    fn exact_zero_with_frozen_digest_is_flagged() {
        let events = update_candidates("c", &samples(1, 0, 40, 0.0, true), &AnomalyConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].rejection_reason, Some(RejectionReason::FrozenFrame));
        let events = update_candidates("c", &samples(1, 0, 40, 0.0, false), &AnomalyConfig::default());
        assert_eq!(events[0].rejection_reason, Some(RejectionReason::ZeroSpeed));
        let c = confirm(&events[0], RoadType::Freeway, &AnomalyConfig::default());
        assert_eq!(c.status, AnomalyStatus::Rejected);
    }

    #[test]
    fn candidate_closes_when_speed_returns() {
        let mut s = samples(1, 0, 20, 0.2, false);
        s.extend(samples(1, 21, 25, 3.0, false));
        let events = update_candidates("c", &s, &AnomalyConfig::default());
        assert_eq!(events[0].end_ts_ms, Some(21_000));
    }

    fn candidate(stationary_s: i64) -> AnomalyEvent {
        let mut e = event(1, 0, stationary_s, 10.0, Direction::E);
        e.status = AnomalyStatus::Candidate;
        e
    }

    #[test]
    fn confirmation_rules() {
        let cfg = AnomalyConfig::default();
        assert_eq!(confirm(&candidate(35), RoadType::Freeway, &cfg).status, AnomalyStatus::Confirmed);
        assert_eq!(confirm(&candidate(30), RoadType::Freeway, &cfg).status, AnomalyStatus::Candidate);
        let r = confirm(&candidate(65), RoadType::Intersection, &cfg);
        assert_eq!((r.status, r.rejection_reason), (AnomalyStatus::Rejected, Some(RejectionReason::Intersection)));
        let cfg60 = AnomalyConfig { intersection_policy: IntersectionPolicy::Confirm60s, ..cfg };
        assert_eq!(confirm(&candidate(65), RoadType::Intersection, &cfg60).status, AnomalyStatus::Confirmed);
        assert_eq!(confirm(&candidate(45), RoadType::Intersection, &cfg60).status, AnomalyStatus::Candidate);
    }

    #[test]
    fn merge_examples() {
        let cfg = AnomalyConfig::default();
        let a = event(1, 100, 200, 10.0, Direction::E);
        let b = event(2, 105, 220, 20.0, Direction::E);
        let out = suppress_and_merge(&[a.clone(), b], &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].start_ts_ms, 100_000);
        assert_eq!(out[0].end_ts_ms, Some(220_000));

        let far_in_time = event(3, 100 + 20 * 60, 100 + 21 * 60, 10.0, Direction::E);
        assert_eq!(suppress_and_merge(&[a.clone(), far_in_time], &cfg).len(), 2);

        assert_eq!(suppress_and_merge(std::slice::from_ref(&a), &cfg), vec![a.clone()]);

        // Same side, far apart in space, inside the window: only the earliest stays.
        let same_side = event(4, 400, 500, 500.0, Direction::E);
        assert_eq!(suppress_and_merge(&[a.clone(), same_side.clone()], &cfg), vec![a.clone()]);
        // Opposite side survives.
        let other_side = event(5, 400, 500, 500.0, Direction::W);
        assert_eq!(suppress_and_merge(&[a, other_side], &cfg).len(), 2);
    }

    #[test]
    fn false_detections_dropped() {
        let mut e = event(1, 0, 60, 10.0, Direction::E);
        e.rejection_reason = Some(RejectionReason::FrozenFrame);
        let out = suppress_and_merge_detailed(&[e], &AnomalyConfig::default());
        assert!(out.kept.is_empty());
        assert_eq!(out.dropped.len(), 1);
    }

    #[test]
    fn config_ordering_enforced() {
        let cfg = AnomalyConfig { confirm_freeway_s: 10.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(AnomalyConfig::default().validate().is_ok());
    }

    #[test]
    fn export_round_trip() {
        let evs = vec![event(1, 0, 60, 10.0, Direction::E), candidate(40)];
        let mut buf = Vec::new();
        write_anomaly_export(&mut buf, &evs).unwrap();
        assert_eq!(read_anomaly_export(buf.as_slice()).unwrap(), evs);
    }
}
