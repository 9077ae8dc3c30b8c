//! Line-crossing vehicle counts, one count per track per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_unchecked, Point2};
use crate::ingest::FrameDetections;
use crate::tracking::TrackEvent;
use crate::types::{ClassLabel, Direction, Track};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CountingError {
    #[error("invalid counting line {label:?}: {msg}")]
    InvalidLine { label: String, msg: String },
    #[error("undefined ratio: ground truth count is zero")]
    UndefinedRatio,
    #[error("count export: {0}")]
    Export(String),
}

/// Directed counting line; crossings along `positive_dir` count as `+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingLine {
    pub label: String,
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub positive_dir: Direction,
}

impl CountingLine {
    pub fn new(label: impl Into<String>, p1: [f64; 2], p2: [f64; 2], positive_dir: Direction) -> Self {
        Self { label: label.into(), p1, p2, positive_dir }
    }

    pub fn validate(&self) -> Result<(), CountingError> {
        let err = |msg: &str| CountingError::InvalidLine { label: self.label.clone(), msg: msg.into() };
        if self.p1.iter().chain(&self.p2).any(|v| !v.is_finite()) {
            return Err(err("non-finite endpoint"));
        }
        if self.p1 == self.p2 {
            return Err(err("p1 equals p2"));
        }
        if self.orientation(self.positive_dir.unit()) == 0.0 {
            return Err(err("positive_dir is parallel to the line"));
        }
        Ok(())
    }

    fn orientation(&self, v: (f64, f64)) -> f64 {
        let (lx, ly) = (self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]);
        lx * v.1 - ly * v.0
    }

    /// Sign of a crossing by the movement `a -> b`, or `None` when the segment
    /// misses the line. Touching an endpoint counts as crossing.
    pub fn crossing(&self, a: Point2<f64>, b: Point2<f64>) -> Option<CrossingSign> {
        let p = (self.p1[0], self.p1[1]);
        let q = (self.p2[0], self.p2[1]);
        let side = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
        let (a, b) = ((a.x, a.y), (b.x, b.y));
        let d1 = side(p, q, a);
        let d2 = side(p, q, b);
        let d3 = side(a, b, p);
        let d4 = side(a, b, q);
        let straddles = |x: f64, y: f64| (x <= 0.0 && y >= 0.0) || (x >= 0.0 && y <= 0.0);
        if !(straddles(d1, d2) && straddles(d3, d4)) {
            return None;
        }
        let motion = self.orientation((b.0 - a.0, b.1 - a.1));
        if motion == 0.0 {
            return None;
        }
        let positive = self.orientation(self.positive_dir.unit());
        Some(if (motion > 0.0) == (positive > 0.0) { CrossingSign::Positive } else { CrossingSign::Negative })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrossingSign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl fmt::Display for CrossingSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrossingSign::Positive => "+",
            CrossingSign::Negative => "-",
        })
    }
}

/// Greedy same-class suppression: a detection is dropped when it overlaps a
/// higher-scoring kept detection of its class with IOU above `iou_threshold`.
pub fn dedup_detections(frame: &FrameDetections, iou_threshold: f64) -> FrameDetections {
    let mut order: Vec<usize> = (0..frame.detections.len()).collect();
    order.sort_by(|&a, &b| frame.detections[b].score.total_cmp(&frame.detections[a].score).then(a.cmp(&b)));
    let mut keep = vec![false; frame.detections.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &frame.detections[i];
        let dup = kept.iter().any(|&k| {
            let o = &frame.detections[k];
            o.class_label == d.class_label && iou_unchecked(&o.bbox, &d.bbox) > iou_threshold
        });
        if !dup {
            keep[i] = true;
            kept.push(i);
        }
    }
    FrameDetections {
        camera_id: frame.camera_id.clone(),
        frame_index: frame.frame_index,
        timestamp_ms: frame.timestamp_ms,
        detections: frame.detections.iter().zip(&keep).filter(|(_, &k)| k).map(|(d, _)| d.clone()).collect(),
        frame_digest: frame.frame_digest,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TallyKey {
    pub line: String,
    pub class: ClassLabel,
    pub sign: CrossingSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub line: String,
    pub class: ClassLabel,
    pub sign: CrossingSign,
    pub track_id: u64,
    pub ts_ms: i64,
}

/// Running counts per (line, class, sign) and the tracks already counted per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountTally {
    counts: BTreeMap<TallyKey, u64>,
    counted: BTreeMap<String, BTreeSet<u64>>,
    crossings: Vec<Crossing>,
}

impl CountTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, line: &str, class: ClassLabel, sign: CrossingSign) -> u64 {
        self.counts
            .get(&TallyKey { line: line.to_string(), class, sign })
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<TallyKey, u64> {
        &self.counts
    }

    /// Total crossings of a line over all classes, optionally for one sign.
    pub fn line_total(&self, line: &str, sign: Option<CrossingSign>) -> u64 {
        self.counts
            .iter()
            .filter(|(k, _)| k.line == line && sign.is_none_or(|s| s == k.sign))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn counted_tracks(&self, line: &str) -> Option<&BTreeSet<u64>> {
        self.counted.get(line)
    }

    /// Every counted crossing in the order it was tallied.
    pub fn crossings(&self) -> &[Crossing] {
        &self.crossings
    }

    /// Counts a finished track against each line at most once.
    pub fn add_track(&mut self, track: &Track, lines: &[CountingLine]) {
        let class = track.majority_class();
        for line in lines {
            let seen = self.counted.entry(line.label.clone()).or_default();
            if seen.contains(&track.track_id) {
                continue;
            }
            let hit = track.detections.windows(2).find_map(|w| {
                line.crossing(w[0].centroid(), w[1].centroid()).map(|s| (s, w[1].timestamp_ms))
            });
            if let Some((sign, ts_ms)) = hit {
                seen.insert(track.track_id);
                *self.counts.entry(TallyKey { line: line.label.clone(), class, sign }).or_default() += 1;
                self.crossings.push(Crossing { line: line.label.clone(), class, sign, track_id: track.track_id, ts_ms });
            }
        }
    }

    /// Per-window counts keyed by (line, class, sign, window start).
    pub fn windowed(&self, window_ms: i64) -> BTreeMap<(String, ClassLabel, CrossingSign, i64), u64> {
        let mut out = BTreeMap::new();
        for c in &self.crossings {
            let start = c.ts_ms.div_euclid(window_ms) * window_ms;
            *out.entry((c.line.clone(), c.class, c.sign, start)).or_default() += 1;
        }
        out
    }

    /// CSV of `line,class,direction,window_start,count`.
    pub fn write_csv<W: Write>(&self, out: W, window_ms: i64) -> Result<(), CountingError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| CountingError::Export(e.to_string());
        w.write_record(["line", "class", "direction", "window_start", "count"]).map_err(io)?;
        for ((line, class, sign, start), n) in self.windowed(window_ms) {
            w.write_record([line, class.to_string(), sign.to_string(), start.to_string(), n.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| CountingError::Export(e.to_string()))
    }
}

/// Applies finished-track events to the tally.
pub fn counting_step(mut tally: CountTally, events: &[TrackEvent], lines: &[CountingLine]) -> CountTally {
    for ev in events {
        if let TrackEvent::Finished(t) = ev {
            tally.add_track(t, lines);
        }
    }
    tally
}

/// Row of a count export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub line: String,
    pub class: ClassLabel,
    pub direction: CrossingSign,
    pub window_start: i64,
    pub count: u64,
}

pub fn read_count_csv<R: std::io::Read>(input: R) -> Result<Vec<CountRow>, CountingError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CountingError::Export(e.to_string()))
}

/// `100 * detected / ground_truth`; values over 100 mean overcounting.
pub fn count_percentage(detected: u64, ground_truth: u64) -> Result<f64, CountingError> {
    if ground_truth == 0 {
        return Err(CountingError::UndefinedRatio);
    }
    Ok(100.0 * detected as f64 / ground_truth as f64)
}
