//! Domain values passed between pipeline stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point2};

/// Object classes emitted by upstream detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Pedestrian,
    Cyclist,
    Car,
    Bus,
    Truck,
}

impl ClassLabel {
    /// Fixed class order used for confusion matrices and reports.
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Pedestrian,
        ClassLabel::Cyclist,
        ClassLabel::Car,
        ClassLabel::Bus,
        ClassLabel::Truck,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Cyclist => "cyclist",
            ClassLabel::Car => "car",
            ClassLabel::Bus => "bus",
            ClassLabel::Truck => "truck",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class label {s:?}"))
    }
}

/// Compass direction in image space: N is up (-y), E is right (+x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    S,
    E,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::S, Direction::E, Direction::W];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit vector in image coordinates (y down).
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::N => (0.0, -1.0),
            Direction::S => (0.0, 1.0),
            Direction::E => (1.0, 0.0),
            Direction::W => (-1.0, 0.0),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::N => "N",
            Direction::S => "S",
            Direction::E => "E",
            Direction::W => "W",
        };
        f.write_str(s)
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(Direction::N),
            "S" => Ok(Direction::S),
            "E" => Ok(Direction::E),
            "W" => Ok(Direction::W),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// Polygon or run-length mask attached to a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MaskShape {
    /// Polygon vertices in pixel coordinates.
    #[serde(rename = "poly")]
    Polygon(Vec<[f64; 2]>),
    /// Runs of `(row, start column, length)`.
    #[serde(rename = "rle")]
    RunLength(Vec<[u32; 3]>),
}

/// One detected object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub timestamp_ms: i64,
    pub class_label: ClassLabel,
    pub bbox: BBox<f64>,
    pub score: f64,
    pub embedding: Option<Vec<f64>>,
    /// Mask carried inline; the record itself identifies the mask.
    pub mask: Option<MaskShape>,
}

impl Detection {
    pub fn new(frame_index: u64, timestamp_ms: i64, class_label: ClassLabel, bbox: BBox<f64>, score: f64) -> Self {
        Self { frame_index, timestamp_ms, class_label, bbox, score, embedding: None, mask: None }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn centroid(&self) -> Point2<f64> {
        self.bbox.center()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Tentative,
    Active,
    Finished,
}

/// A time-ordered run of detections sharing one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub detections: Vec<Detection>,
    pub state: TrackState,
}

impl Track {
    pub fn new(track_id: u64, first: Detection) -> Self {
        Self { track_id, detections: vec![first], state: TrackState::Tentative }
    }

    pub fn last(&self) -> &Detection {
        self.detections.last().expect("tracks are never empty")
    }

    pub fn first(&self) -> &Detection {
        self.detections.first().expect("tracks are never empty")
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn max_score(&self) -> f64 {
        self.detections.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Most frequent class; ties go to the class seen first.
    pub fn majority_class(&self) -> ClassLabel {
        let mut counts = [0usize; 5];
        let mut first_seen = [usize::MAX; 5];
        for (i, d) in self.detections.iter().enumerate() {
            let k = d.class_label.index();
            counts[k] += 1;
            first_seen[k] = first_seen[k].min(i);
        }
        ClassLabel::ALL
            .into_iter()
            .max_by(|a, b| {
                counts[a.index()]
                    .cmp(&counts[b.index()])
                    .then(first_seen[b.index()].cmp(&first_seen[a.index()]))
            })
            .expect("five classes")
    }
}
