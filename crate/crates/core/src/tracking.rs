//! Tracking-by-detection: the greedy IOU tracker and the appearance (feature) tracker.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cosine_distance, iou_unchecked, BBox};
use crate::ingest::FrameDetections;
use crate::types::{ClassLabel, Detection, Track, TrackState};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("sequencing error: frame {got} does not follow frame {last}")]
    Sequence { last: u64, got: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("track dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IouTrackerConfig {
    /// Minimum IOU between a track's last box and the next detection.
    pub sigma_iou: f64,
    /// Detections scoring below this are ignored.
    pub sigma_l: f64,
    /// A track must reach this score at least once to be reported.
    pub sigma_h: f64,
    /// Minimum reported track length in frames.
    pub t_min: usize,
}

impl Default for IouTrackerConfig {
    fn default() -> Self {
        Self { sigma_iou: 0.5, sigma_l: 0.3, sigma_h: 0.5, t_min: 2 }
    }
}

impl IouTrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.sigma_iou > 0.0 && self.sigma_iou <= 1.0) {
            return Err(TrackingError::Config(format!("sigma_iou {} outside (0, 1]", self.sigma_iou)));
        }
        if !(0.0..=1.0).contains(&self.sigma_l) || !(0.0..=1.0).contains(&self.sigma_h) {
            return Err(TrackingError::Config("score thresholds must lie in [0, 1]".into()));
        }
        if self.sigma_l > self.sigma_h {
            return Err(TrackingError::Config("sigma_l must not exceed sigma_h".into()));
        }
        if self.t_min < 1 {
            return Err(TrackingError::Config("t_min must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureTrackerConfig {
    pub max_cosine_distance: f64,
    pub iou_gate: f64,
    /// Frames a track may go unmatched before it finishes.
    pub max_age_frames: u32,
}

impl Default for FeatureTrackerConfig {
    fn default() -> Self {
        Self { max_cosine_distance: 0.3, iou_gate: 0.1, max_age_frames: 30 }
    }
}

impl FeatureTrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.max_cosine_distance > 0.0 && self.max_cosine_distance <= 2.0) {
            return Err(TrackingError::Config("max_cosine_distance outside (0, 2]".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(TrackingError::Config("iou_gate outside [0, 1]".into()));
        }
        if self.max_age_frames < 1 {
            return Err(TrackingError::Config("max_age_frames must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackEvent {
    Started(u64),
    Extended(u64),
    /// A track ended and passed the reporting filters.
    Finished(Track),
    /// A track ended but was too short or never confident enough.
    Discarded(u64),
}

#[derive(Debug, Clone)]
struct LiveTrack {
    track: Track,
    misses: u32,
}

/// Tracks in flight plus reported finished tracks.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    active: Vec<LiveTrack>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self { next_id: 1, ..Default::default() }
    }

    pub fn active_tracks(&self) -> impl Iterator<Item = &Track> {
        self.active.iter().map(|t| &t.track)
    }

    pub fn finished_tracks(&self) -> &[Track] {
        &self.finished
    }

    /// Removes and returns finished tracks accumulated so far.
    pub fn take_finished(&mut self) -> Vec<Track> {
        std::mem::take(&mut self.finished)
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    fn spawn(&mut self, det: Detection, events: &mut Vec<TrackEvent>) {
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        self.active.push(LiveTrack { track: Track::new(id, det), misses: 0 });
        events.push(TrackEvent::Started(id));
    }

    fn check_sequence(&self, frame_index: u64) -> Result<u64, TrackingError> {
        match self.last_frame {
            Some(last) if frame_index <= last => Err(TrackingError::Sequence { last, got: frame_index }),
            Some(last) => Ok(frame_index - last - 1),
            None => Ok(0),
        }
    }
}

fn iou_reportable(t: &Track, cfg: &IouTrackerConfig) -> bool {
    t.len() >= cfg.t_min && t.max_score() >= cfg.sigma_h
}

fn close_iou_track(state: &mut TrackerState, mut t: Track, cfg: &IouTrackerConfig, events: &mut Vec<TrackEvent>) {
    if iou_reportable(&t, cfg) {
        t.state = TrackState::Finished;
        state.finished.push(t.clone());
        events.push(TrackEvent::Finished(t));
    } else {
        events.push(TrackEvent::Discarded(t.track_id));
    }
}

/// Advances the IOU tracker by one frame.
///
/// Tracks are visited by descending last-box score (ties by id); each takes the
/// unclaimed detection with the highest IOU to its last box when that IOU
/// reaches `sigma_iou`. Unmatched tracks end at once.
pub fn iou_tracker_step(
    mut state: TrackerState,
    frame: &FrameDetections,
    cfg: &IouTrackerConfig,
) -> Result<(TrackerState, Vec<TrackEvent>), TrackingError> {
    let events = iou_step_in_place(&mut state, frame, cfg)?;
    Ok((state, events))
}

pub(crate) fn iou_step_in_place(
    state: &mut TrackerState,
    frame: &FrameDetections,
    cfg: &IouTrackerConfig,
) -> Result<Vec<TrackEvent>, TrackingError> {
    let gap = state.check_sequence(frame.frame_index)?;
    let mut events = Vec::new();
    if gap > 0 {
        for live in std::mem::take(&mut state.active) {
            close_iou_track(state, live.track, cfg, &mut events);
        }
    }
    state.last_frame = Some(frame.frame_index);

    let dets: Vec<&Detection> = frame.detections.iter().filter(|d| d.score >= cfg.sigma_l).collect();
    let mut claimed = vec![false; dets.len()];

    let mut tracks = std::mem::take(&mut state.active);
    tracks.sort_by(|a, b| {
        b.track
            .last()
            .score
            .total_cmp(&a.track.last().score)
            .then(a.track.track_id.cmp(&b.track.track_id))
    });

    let mut kept = Vec::with_capacity(tracks.len());
    for mut live in tracks {
        let last_box = live.track.last().bbox;
        let mut best: Option<(usize, f64)> = None;
        for (j, det) in dets.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let v = iou_unchecked(&last_box, &det.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, v)) if v >= cfg.sigma_iou => {
                claimed[j] = true;
                live.track.detections.push(dets[j].clone());
                if live.track.state == TrackState::Tentative && iou_reportable(&live.track, cfg) {
                    live.track.state = TrackState::Active;
                }
                events.push(TrackEvent::Extended(live.track.track_id));
                kept.push(live);
            }
            _ => close_iou_track(state, live.track, cfg, &mut events),
        }
    }
    kept.sort_by_key(|l| l.track.track_id);
    state.active = kept;

    for (j, det) in dets.into_iter().enumerate() {
        if !claimed[j] {
            state.spawn(det.clone(), &mut events);
            if let Some(l) = state.active.last_mut() {
                if iou_reportable(&l.track, cfg) {
                    l.track.state = TrackState::Active;
                }
            }
        }
    }
    Ok(events)
}

/// Ends every active IOU track, applying the reporting filters.
pub fn iou_tracker_finish(mut state: TrackerState, cfg: &IouTrackerConfig) -> (TrackerState, Vec<TrackEvent>) {
    let mut events = Vec::new();
    for live in std::mem::take(&mut state.active) {
        close_iou_track(&mut state, live.track, cfg, &mut events);
    }
    (state, events)
}

fn close_feature_track(state: &mut TrackerState, mut t: Track, events: &mut Vec<TrackEvent>) {
    t.state = TrackState::Finished;
    state.finished.push(t.clone());
    events.push(TrackEvent::Finished(t));
}

fn age_feature_tracks(state: &mut TrackerState, frames: u32, cfg: &FeatureTrackerConfig, events: &mut Vec<TrackEvent>) {
    let mut kept = Vec::with_capacity(state.active.len());
    for mut live in std::mem::take(&mut state.active) {
        live.misses = live.misses.saturating_add(frames);
        if live.misses > cfg.max_age_frames {
            close_feature_track(state, live.track, events);
        } else {
            kept.push(live);
        }
    }
    state.active = kept;
}

/// Advances the appearance tracker by one frame.
///
/// Candidate pairs must pass both the cosine gate and the IOU gate; they are
/// assigned greedily by ascending cosine distance. Unmatched tracks survive up
/// to `max_age_frames` missed frames.
pub fn feature_tracker_step(
    mut state: TrackerState,
    frame: &FrameDetections,
    cfg: &FeatureTrackerConfig,
) -> Result<(TrackerState, Vec<TrackEvent>), TrackingError> {
    let events = feature_step_in_place(&mut state, frame, cfg)?;
    Ok((state, events))
}

pub(crate) fn feature_step_in_place(
    state: &mut TrackerState,
    frame: &FrameDetections,
    cfg: &FeatureTrackerConfig,
) -> Result<Vec<TrackEvent>, TrackingError> {
    if let Some(i) = frame.detections.iter().position(|d| d.embedding.is_none()) {
        return Err(TrackingError::InvalidInput(format!(
            "detection {i} of frame {} has no embedding",
            frame.frame_index
        )));
    }
    let gap = state.check_sequence(frame.frame_index)?;
    let mut events = Vec::new();
    if gap > 0 {
        age_feature_tracks(state, gap.min(u32::MAX as u64) as u32, cfg, &mut events);
    }
    state.last_frame = Some(frame.frame_index);

    let dets = &frame.detections;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, live) in state.active.iter().enumerate() {
        let last = live.track.last();
        let emb = last.embedding.as_deref().unwrap_or_default();
        for (j, det) in dets.iter().enumerate() {
            let d_emb = det.embedding.as_deref().unwrap_or_default();
            let cos = cosine_distance(emb, d_emb).map_err(|e| TrackingError::InvalidInput(e.to_string()))?;
            if cos <= cfg.max_cosine_distance && iou_unchecked(&last.bbox, &det.bbox) >= cfg.iou_gate {
                pairs.push((cos, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track_taken = vec![false; state.active.len()];
    let mut det_taken = vec![false; dets.len()];
    for (_, i, j) in pairs {
        if track_taken[i] || det_taken[j] {
            continue;
        }
        track_taken[i] = true;
        det_taken[j] = true;
        let live = &mut state.active[i];
        live.track.detections.push(dets[j].clone());
        live.track.state = TrackState::Active;
        live.misses = 0;
        events.push(TrackEvent::Extended(live.track.track_id));
    }

    let mut kept = Vec::with_capacity(state.active.len());
    for (i, mut live) in std::mem::take(&mut state.active).into_iter().enumerate() {
        if track_taken[i] {
            kept.push(live);
            continue;
        }
        live.misses += 1;
        if live.misses > cfg.max_age_frames {
            close_feature_track(state, live.track, &mut events);
        } else {
            kept.push(live);
        }
    }
    state.active = kept;

    for (j, det) in dets.iter().enumerate() {
        if !det_taken[j] {
            state.spawn(det.clone(), &mut events);
        }
    }
    Ok(events)
}

pub fn feature_tracker_finish(mut state: TrackerState) -> (TrackerState, Vec<TrackEvent>) {
    let mut events = Vec::new();
    for live in std::mem::take(&mut state.active) {
        close_feature_track(&mut state, live.track, &mut events);
    }
    (state, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrackerConfig {
    Iou(IouTrackerConfig),
    Feature(FeatureTrackerConfig),
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::Iou(IouTrackerConfig::default())
    }
}

/// A tracker instance for one camera stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    state: TrackerState,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackingError> {
        match &cfg {
            TrackerConfig::Iou(c) => c.validate()?,
            TrackerConfig::Feature(c) => c.validate()?,
        }
        Ok(Self { cfg, state: TrackerState::new() })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn step(&mut self, frame: &FrameDetections) -> Result<Vec<TrackEvent>, TrackingError> {
        match &self.cfg {
            TrackerConfig::Iou(c) => iou_step_in_place(&mut self.state, frame, c),
            TrackerConfig::Feature(c) => feature_step_in_place(&mut self.state, frame, c),
        }
    }

    pub fn finish(&mut self) -> Vec<TrackEvent> {
        let state = std::mem::take(&mut self.state);
        let (state, events) = match &self.cfg {
            TrackerConfig::Iou(c) => iou_tracker_finish(state, c),
            TrackerConfig::Feature(_) => feature_tracker_finish(state),
        };
        self.state = state;
        events
    }

    pub fn take_finished(&mut self) -> Vec<Track> {
        self.state.take_finished()
    }
}

/// Runs a tracker over a whole stream and returns reported tracks sorted by id.
pub fn track_all<'a, I>(frames: I, cfg: TrackerConfig) -> Result<Vec<Track>, TrackingError>
where
    I: IntoIterator<Item = &'a FrameDetections>,
{
    let mut tracker = Tracker::new(cfg)?;
    for f in frames {
        tracker.step(f)?;
    }
    tracker.finish();
    let mut tracks = tracker.take_finished();
    tracks.sort_by_key(|t| t.track_id);
    Ok(tracks)
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpRow {
    track_id: u64,
    frame: u64,
    ts_ms: i64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    class: ClassLabel,
    score: f64,
}

/// Writes tracks as CSV, one row per (track, frame).
pub fn write_track_dump<W: Write>(out: W, tracks: &[Track]) -> Result<(), TrackingError> {
    let mut w = csv::Writer::from_writer(out);
    for t in tracks {
        for d in &t.detections {
            w.serialize(DumpRow {
                track_id: t.track_id,
                frame: d.frame_index,
                ts_ms: d.timestamp_ms,
                x: d.bbox.x,
                y: d.bbox.y,
                w: d.bbox.w,
                h: d.bbox.h,
                class: d.class_label,
                score: d.score,
            })
            .map_err(|e| TrackingError::Dump(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| TrackingError::Dump(e.to_string()))
}

pub fn read_track_dump<R: Read>(input: R) -> Result<Vec<Track>, TrackingError> {
    let mut r = csv::Reader::from_reader(input);
    let mut tracks: std::collections::BTreeMap<u64, Track> = Default::default();
    for (i, row) in r.deserialize::<DumpRow>().enumerate() {
        let row = row.map_err(|e| TrackingError::Dump(format!("row {}: {e}", i + 1)))?;
        let bbox = BBox::new(row.x, row.y, row.w, row.h)
            .map_err(|e| TrackingError::Dump(format!("row {}: {e}", i + 1)))?;
        let det = Detection::new(row.frame, row.ts_ms, row.class, bbox, row.score);
        match tracks.get_mut(&row.track_id) {
            Some(t) => {
                if det.frame_index <= t.last().frame_index {
                    return Err(TrackingError::Dump(format!("row {}: frames not increasing", i + 1)));
                }
                t.detections.push(det);
            }
            None => {
                let mut t = Track::new(row.track_id, det);
                t.state = TrackState::Finished;
                tracks.insert(row.track_id, t);
            }
        }
    }
    Ok(tracks.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: u64, x: f64, y: f64, score: f64) -> Detection {
        Detection::new(frame, frame as i64 * 100, ClassLabel::Car, BBox::new(x, y, 10.0, 10.0).unwrap(), score)
    }

    fn frame(i: u64, dets: Vec<Detection>) -> FrameDetections {
        FrameDetections { detections: dets, ..FrameDetections::empty("c", i, i as i64 * 100) }
    }

    fn run_iou(frames: &[FrameDetections], cfg: IouTrackerConfig) -> Vec<Track> {
        track_all(frames, TrackerConfig::Iou(cfg)).unwrap()
    }

    #[test]
    fn stable_object_gives_one_track() {
        let frames: Vec<_> = (0..10).map(|i| frame(i, vec![det(i, i as f64, 0.0, 0.9)])).collect();
        let tracks = run_iou(&frames, IouTrackerConfig::default());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 10);
    }

    #[test]
    fn missing_frame_splits_track() {
        let frames: Vec<_> = (0..10)
            .map(|i| if i == 5 { frame(i, vec![]) } else { frame(i, vec![det(i, i as f64, 0.0, 0.9)]) })
            .collect();
        let tracks = run_iou(&frames, IouTrackerConfig::default());
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 5);
        assert_eq!(tracks[1].len(), 4);

        // Same split when the empty frame is absent from the stream entirely.
        let sparse: Vec<_> = frames.into_iter().filter(|f| f.frame_index != 5).collect();
        assert_eq!(run_iou(&sparse, IouTrackerConfig::default()).len(), 2);
    }

    #[test]
    fn single_frame_detection_filtered_by_t_min() {
        let tracks = run_iou(&[frame(0, vec![det(0, 0.0, 0.0, 0.9)])], IouTrackerConfig::default());
        assert!(tracks.is_empty());
    }

    #[test]
    fn low_confidence_tracks_discarded() {
        let frames: Vec<_> = (0..5).map(|i| frame(i, vec![det(i, 0.0, 0.0, 0.4)])).collect();
        assert!(run_iou(&frames, IouTrackerConfig::default()).is_empty());
        let frames: Vec<_> = (0..5).map(|i| frame(i, vec![det(i, 0.0, 0.0, 0.2)])).collect();
        assert!(run_iou(&frames, IouTrackerConfig::default()).is_empty());
    }

    #[test]
    fn out_of_order_frame_rejected() {
        let s = TrackerState::new();
        let (s, _) = iou_tracker_step(s, &frame(3, vec![]), &IouTrackerConfig::default()).unwrap();
        let err = iou_tracker_step(s, &frame(3, vec![]), &IouTrackerConfig::default()).unwrap_err();
        assert!(matches!(err, TrackingError::Sequence { last: 3, got: 3 }));
    }

    fn emb_det(frame: u64, x: f64, y: f64, emb: [f64; 2]) -> Detection {
        det(frame, x, y, 0.9).with_embedding(emb.to_vec())
    }

    #[test]
    fn crossing_objects_keep_identity_with_features() {
        // Two objects moving toward each other along the same row.
        let frames: Vec<_> = (0..20u64)
            .map(|i| {
                let t = i as f64;
                frame(i, vec![emb_det(i, t * 2.0, 0.0, [1.0, 0.0]), emb_det(i, 38.0 - t * 2.0, 0.0, [0.0, 1.0])])
            })
            .collect();
        let tracks = track_all(&frames, TrackerConfig::Feature(FeatureTrackerConfig::default())).unwrap();
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            assert_eq!(t.len(), 20);
            let e0 = t.first().embedding.clone();
            assert!(t.detections.iter().all(|d| d.embedding == e0));
        }

        // The IOU tracker, blind to appearance, swaps identities where the boxes coincide.
        let iou_tracks = run_iou(&frames, IouTrackerConfig::default());
        let swapped = iou_tracks.iter().any(|t| {
            let e0 = t.first().embedding.clone();
            t.detections.iter().any(|d| d.embedding != e0)
        });
        assert!(swapped || iou_tracks.len() > 2);
    }

    #[test]
    fn occlusion_bridged_by_aging() {
        let frames: Vec<_> = (0..10u64)
            .map(|i| {
                if i == 4 || i == 5 {
                    frame(i, vec![])
                } else {
                    frame(i, vec![emb_det(i, i as f64, 0.0, [1.0, 0.0])])
                }
            })
            .collect();
        let cfg = FeatureTrackerConfig { max_age_frames: 3, ..Default::default() };
        let tracks = track_all(&frames, TrackerConfig::Feature(cfg)).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 8);

        let cfg = FeatureTrackerConfig { max_age_frames: 1, ..Default::default() };
        assert_eq!(track_all(&frames, TrackerConfig::Feature(cfg)).unwrap().len(), 2);
    }

    #[test]
    fn feature_tracker_empty_and_missing_embedding() {
        let (s, ev) = feature_tracker_step(TrackerState::new(), &frame(0, vec![]), &Default::default()).unwrap();
        assert!(ev.is_empty());
        assert_eq!(s.active_tracks().count(), 0);
        assert_eq!(s.finished_tracks().len(), 0);
        let err = feature_tracker_step(TrackerState::new(), &frame(0, vec![det(0, 0.0, 0.0, 0.9)]), &Default::default());
        assert!(matches!(err, Err(TrackingError::InvalidInput(_))));
    }

    #[test]
    fn config_validation() {
        assert!(IouTrackerConfig { sigma_l: 0.6, sigma_h: 0.5, ..Default::default() }.validate().is_err());
        assert!(IouTrackerConfig { sigma_iou: 0.0, ..Default::default() }.validate().is_err());
        assert!(FeatureTrackerConfig { max_age_frames: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn dump_round_trip() {
        let frames: Vec<_> = (0..4).map(|i| frame(i, vec![det(i, i as f64 * 0.5, 1.25, 0.9)])).collect();
        let tracks = run_iou(&frames, IouTrackerConfig::default());
        let mut buf = Vec::new();
        write_track_dump(&mut buf, &tracks).unwrap();
        let back = read_track_dump(buf.as_slice()).unwrap();
        assert_eq!(back, tracks);
    }
}
