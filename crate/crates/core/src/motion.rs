//! Speed, travel direction and road type derived from tracks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Direction, Track};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadType {
    Freeway,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Net displacements shorter than this have no direction.
    pub min_displacement_px: f64,
    /// Absolute floor on tracks needed before a direction counts as present.
    pub min_support_floor: u32,
    /// Fraction of all tracks needed before a direction counts as present.
    pub min_support_fraction: f64,
    /// Look-back horizon for the rolling histogram.
    pub histogram_horizon_ms: i64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            min_displacement_px: 10.0,
            min_support_floor: 3,
            min_support_fraction: 0.05,
            histogram_horizon_ms: 15 * 60 * 1000,
        }
    }
}

/// Mean centroid speed over the trailing `window_ms` of the track, in pixels per second.
///
/// The path length between consecutive samples is divided by the elapsed time,
/// so the result only depends on timestamps, not frame indices.
pub fn estimate_speed(track: &Track, window_ms: i64) -> Result<f64, MotionError> {
    let dets = &track.detections;
    let Some(last) = dets.last() else {
        return Err(MotionError::InsufficientData("empty track".into()));
    };
    let cutoff = last.timestamp_ms - window_ms;
    let start = dets.partition_point(|d| d.timestamp_ms < cutoff);
    let window = &dets[start..];
    if window.len() < 2 {
        return Err(MotionError::InsufficientData(format!(
            "{} sample(s) inside a {window_ms} ms window",
            window.len()
        )));
    }
    let elapsed_ms = window[window.len() - 1].timestamp_ms - window[0].timestamp_ms;
    if elapsed_ms <= 0 {
        return Err(MotionError::InsufficientData("window spans zero time".into()));
    }
    let path: f64 = window.windows(2).map(|w| w[0].centroid().distance(&w[1].centroid())).sum();
    Ok(path * 1000.0 / elapsed_ms as f64)
}

/// Quantizes a displacement vector to the dominant compass axis.
/// `|dx| == |dy|` resolves to the horizontal axis.
pub fn direction_of(dx: f64, dy: f64, min_displacement_px: f64) -> Option<Direction> {
    if !(dx.is_finite() && dy.is_finite()) || dx.hypot(dy) < min_displacement_px || (dx == 0.0 && dy == 0.0) {
        return None;
    }
    Some(if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Direction::E
        } else {
            Direction::W
        }
    } else if dy > 0.0 {
        Direction::S
    } else {
        Direction::N
    })
}

/// Direction of the net first-to-last centroid displacement.
pub fn dominant_direction(track: &Track, min_displacement_px: f64) -> Option<Direction> {
    let a = track.first().centroid();
    let b = track.last().centroid();
    direction_of(b.x - a.x, b.y - a.y, min_displacement_px)
}

/// Number of tracks whose dominant direction falls in each compass bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirectionHistogram {
    counts: [u32; 4],
}

impl DirectionHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tracks<'a, I: IntoIterator<Item = &'a Track>>(tracks: I, min_displacement_px: f64) -> Self {
        let mut h = Self::new();
        for t in tracks {
            if let Some(d) = dominant_direction(t, min_displacement_px) {
                h.add(d);
            }
        }
        h
    }

    pub fn add(&mut self, d: Direction) {
        self.counts[d.index()] += 1;
    }

    pub fn remove(&mut self, d: Direction) {
        self.counts[d.index()] = self.counts[d.index()].saturating_sub(1);
    }

    pub fn count(&self, d: Direction) -> u32 {
        self.counts[d.index()]
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// `max(floor, ceil(fraction * total))`.
    pub fn default_min_support(&self, cfg: &MotionConfig) -> u32 {
        let frac = (cfg.min_support_fraction * self.total() as f64).ceil() as u32;
        cfg.min_support_floor.max(frac)
    }

    pub fn detected(&self, min_support: u32) -> Vec<Direction> {
        Direction::ALL.into_iter().filter(|&d| self.count(d) >= min_support.max(1)).collect()
    }
}

/// More than two supported directions means an intersection; otherwise a freeway.
pub fn classify_road_type(hist: &DirectionHistogram, min_support: u32) -> RoadType {
    if hist.detected(min_support).len() > 2 {
        RoadType::Intersection
    } else {
        RoadType::Freeway
    }
}

/// Rolling direction histogram over recently finished tracks.
#[derive(Debug, Clone)]
pub struct RoadTypeEstimator {
    cfg: MotionConfig,
    hist: DirectionHistogram,
    recent: VecDeque<(i64, Direction)>,
}

impl RoadTypeEstimator {
    pub fn new(cfg: MotionConfig) -> Self {
        Self { cfg, hist: DirectionHistogram::new(), recent: VecDeque::new() }
    }

    pub fn observe(&mut self, track: &Track) {
        if let Some(d) = dominant_direction(track, self.cfg.min_displacement_px) {
            self.hist.add(d);
            self.recent.push_back((track.last().timestamp_ms, d));
        }
    }

    /// Drops tracks that ended before `now_ms - horizon`.
    pub fn expire(&mut self, now_ms: i64) {
        let cutoff = now_ms - self.cfg.histogram_horizon_ms;
        while let Some(&(ts, d)) = self.recent.front() {
            if ts >= cutoff {
                break;
            }
            self.hist.remove(d);
            self.recent.pop_front();
        }
    }

    pub fn histogram(&self) -> &DirectionHistogram {
        &self.hist
    }

    pub fn road_type(&self) -> RoadType {
        classify_road_type(&self.hist, self.hist.default_min_support(&self.cfg))
    }
}
