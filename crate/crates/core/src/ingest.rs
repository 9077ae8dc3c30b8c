//! Detection logs, masks and the camera registry.
//!
//! A detection log is newline-delimited JSON with one detection per line:
//!
//! ```text
//! {"cam":"c1","frame":7,"ts_ms":700,"cls":"car","box":[10,20,40,22],"score":0.93,"digest":123}
//! ```
//!
//! `emb`, `mask` and `digest` are optional. A line without `cls`/`box`/`score`
//! marks a frame that had no detections, so its timestamp and digest survive.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::CountingLine;
use crate::geometry::{BBox, BitMask};
use crate::motion::RoadType;
use crate::types::{ClassLabel, Detection, MaskShape};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: validation error: {msg}")]
    Validation { line: usize, msg: String },
    #[error("line {line}: sequencing error: {msg}")]
    Sequence { line: usize, msg: String },
    #[error("mask decode error: {0}")]
    Decode(String),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("duplicate camera id {0:?}")]
    DuplicateCamera(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All detections of one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub camera_id: String,
    pub frame_index: u64,
    pub timestamp_ms: i64,
    pub detections: Vec<Detection>,
    pub frame_digest: Option<u64>,
}

impl FrameDetections {
    pub fn empty(camera_id: impl Into<String>, frame_index: u64, timestamp_ms: i64) -> Self {
        Self {
            camera_id: camera_id.into(),
            frame_index,
            timestamp_ms,
            detections: Vec::new(),
            frame_digest: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogRecord {
    cam: String,
    frame: u64,
    ts_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cls: Option<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digest: Option<u64>,
}

fn validate_detection(rec: &LogRecord, line: usize) -> Result<Option<Detection>, IngestError> {
    let vfail = |msg: String| IngestError::Validation { line, msg };
    let (cls, bbox, score) = match (&rec.cls, rec.bbox, rec.score) {
        (None, None, None) => return Ok(None),
        (Some(c), Some(b), Some(s)) => (c, b, s),
        _ => return Err(vfail("cls, box and score must appear together".into())),
    };
    let class_label: ClassLabel = cls.parse().map_err(vfail)?;
    let bbox = BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).map_err(|e| vfail(e.to_string()))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(vfail(format!("score {score} outside [0, 1]")));
    }
    if let Some(emb) = &rec.emb {
        let norm = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if emb.is_empty() || (norm - 1.0).abs() > 1e-6 {
            return Err(vfail(format!("embedding norm {norm} is not 1")));
        }
    }
    Ok(Some(Detection {
        frame_index: rec.frame,
        timestamp_ms: rec.ts_ms,
        class_label,
        bbox,
        score,
        embedding: rec.emb.clone(),
        mask: rec.mask.clone(),
    }))
}

/// Streaming reader yielding one [`FrameDetections`] per contiguous run of
/// lines sharing a camera and frame index.
pub struct DetectionLogReader<R> {
    input: R,
    line_no: usize,
    buf: String,
    pending: Option<FrameDetections>,
    last_seen: HashMap<String, (u64, i64)>,
    done: bool,
}

impl<R: BufRead> DetectionLogReader<R> {
    pub fn new(input: R) -> Self {
        Self {
            input,
            line_no: 0,
            buf: String::new(),
            pending: None,
            last_seen: HashMap::new(),
            done: false,
        }
    }

    fn check_order(&mut self, rec: &LogRecord) -> Result<(), IngestError> {
        if let Some(&(frame, ts)) = self.last_seen.get(&rec.cam) {
            if rec.frame <= frame {
                return Err(IngestError::Sequence {
                    line: self.line_no,
                    msg: format!("camera {} frame {} after frame {}", rec.cam, rec.frame, frame),
                });
            }
            if rec.ts_ms < ts {
                return Err(IngestError::Sequence {
                    line: self.line_no,
                    msg: format!("camera {} timestamp {} before {}", rec.cam, rec.ts_ms, ts),
                });
            }
        }
        Ok(())
    }

    fn next_frame(&mut self) -> Result<Option<FrameDetections>, IngestError> {
        loop {
            self.buf.clear();
            let n = self.input.read_line(&mut self.buf)?;
            if n == 0 {
                self.done = true;
                return Ok(self.pending.take());
            }
            self.line_no += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(text).map_err(|e| IngestError::Parse {
                line: self.line_no,
                msg: e.to_string(),
            })?;
            let det = validate_detection(&rec, self.line_no)?;

            if let Some(p) = self.pending.as_mut() {
                if p.camera_id == rec.cam && p.frame_index == rec.frame {
                    if p.timestamp_ms != rec.ts_ms {
                        return Err(IngestError::Validation {
                            line: self.line_no,
                            msg: format!("frame {} has conflicting timestamps", rec.frame),
                        });
                    }
                    match (p.frame_digest, rec.digest) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(IngestError::Validation {
                                line: self.line_no,
                                msg: format!("frame {} has conflicting digests", rec.frame),
                            })
                        }
                        (None, Some(b)) => p.frame_digest = Some(b),
                        _ => {}
                    }
                    p.detections.extend(det);
                    continue;
                }
            }

            self.check_order(&rec)?;
            self.last_seen.insert(rec.cam.clone(), (rec.frame, rec.ts_ms));
            let frame = FrameDetections {
                camera_id: rec.cam,
                frame_index: rec.frame,
                timestamp_ms: rec.ts_ms,
                detections: det.into_iter().collect(),
                frame_digest: rec.digest,
            };
            if let Some(prev) = self.pending.replace(frame) {
                return Ok(Some(prev));
            }
        }
    }
}

impl<R: BufRead> Iterator for DetectionLogReader<R> {
    type Item = Result<FrameDetections, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Parses a detection log, yielding frames in file order.
pub fn parse_detection_log<R: BufRead>(input: R) -> DetectionLogReader<R> {
    DetectionLogReader::new(input)
}

/// Reads a whole detection log into memory.
pub fn read_detection_log<R: BufRead>(input: R) -> Result<Vec<FrameDetections>, IngestError> {
    parse_detection_log(input).collect()
}

fn record_for(frame: &FrameDetections, det: Option<&Detection>) -> LogRecord {
    LogRecord {
        cam: frame.camera_id.clone(),
        frame: frame.frame_index,
        ts_ms: frame.timestamp_ms,
        cls: det.map(|d| d.class_label.as_str().to_string()),
        bbox: det.map(|d| d.bbox.into()),
        score: det.map(|d| d.score),
        emb: det.and_then(|d| d.embedding.clone()),
        mask: det.and_then(|d| d.mask.clone()),
        digest: frame.frame_digest,
    }
}

/// Writes frames in the line format read by [`parse_detection_log`].
pub fn write_detection_log<'a, W, I>(out: &mut W, frames: I) -> Result<(), IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a FrameDetections>,
{
    for frame in frames {
        if frame.detections.is_empty() {
            serde_json::to_writer(&mut *out, &record_for(frame, None)).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        for det in &frame.detections {
            serde_json::to_writer(&mut *out, &record_for(frame, Some(det))).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn on_segment(px: f64, py: f64, a: [f64; 2], b: [f64; 2]) -> bool {
    const EPS: f64 = 1e-9;
    let cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if cross.abs() > EPS * (1.0 + (b[0] - a[0]).abs() + (b[1] - a[1]).abs()) {
        return false;
    }
    px >= a[0].min(b[0]) - EPS
        && px <= a[0].max(b[0]) + EPS
        && py >= a[1].min(b[1]) - EPS
        && py <= a[1].max(b[1]) + EPS
}

fn decode_polygon(poly: &[[f64; 2]], width: u32, height: u32) -> Result<BitMask, IngestError> {
    if poly.len() < 3 {
        return Err(IngestError::Decode(format!("polygon has {} vertices, need 3", poly.len())));
    }
    if poly.iter().flatten().any(|v| !v.is_finite()) {
        return Err(IngestError::Decode("non-finite polygon vertex".into()));
    }
    let a = poly[0];
    let collinear = poly.windows(2).all(|w| {
        let (p, q) = (w[0], w[1]);
        ((p[0] - a[0]) * (q[1] - a[1]) - (p[1] - a[1]) * (q[0] - a[0])).abs() < 1e-12
    });
    if collinear {
        return Err(IngestError::Decode("degenerate polygon: all vertices collinear".into()));
    }

    let mut mask = BitMask::new(width, height);
    if width == 0 || height == 0 {
        return Ok(mask);
    }
    let n = poly.len();
    let edges: Vec<([f64; 2], [f64; 2])> = (0..n).map(|i| (poly[i], poly[(i + 1) % n])).collect();
    let min_y = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = min_y.ceil().max(0.0) as i64;
    let row_hi = max_y.floor().min(height as f64 - 1.0) as i64;
    let max_col = width as i64 - 1;
    let mut xs = Vec::new();

    // Interior by even-odd scanline with half-open vertex rule.
    for row in row_lo..=row_hi {
        let y = row as f64;
        xs.clear();
        for &(p, q) in &edges {
            if (p[1] <= y && y < q[1]) || (q[1] <= y && y < p[1]) {
                xs.push(p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0) as i64;
            let hi = (pair[1].floor() as i64).min(max_col);
            for col in lo..=hi {
                mask.set(col as u32, row as u32).expect("clamped to grid");
            }
        }
    }

    // Boundary pixels count as inside.
    for &(p, q) in &edges {
        let y_lo = p[1].min(q[1]).ceil().max(0.0) as i64;
        let y_hi = (p[1].max(q[1]).floor() as i64).min(height as i64 - 1);
        let x_lo = p[0].min(q[0]).ceil().max(0.0) as i64;
        let x_hi = (p[0].max(q[0]).floor() as i64).min(max_col);
        for row in y_lo..=y_hi {
            for col in x_lo..=x_hi {
                if on_segment(col as f64, row as f64, p, q) {
                    mask.set(col as u32, row as u32).expect("clamped to grid");
                }
            }
        }
    }
    Ok(mask)
}

/// Rasterizes a polygon (even-odd fill, boundary inclusive, pixel centers at
/// integer coordinates) or expands run-length records into a mask.
pub fn decode_mask(shape: &MaskShape, width: u32, height: u32) -> Result<BitMask, IngestError> {
    match shape {
        MaskShape::Polygon(poly) => decode_polygon(poly, width, height),
        MaskShape::RunLength(runs) => {
            let mut mask = BitMask::new(width, height);
            for &[row, start, len] in runs {
                let end = start as u64 + len as u64;
                if row >= height || end > width as u64 {
                    return Err(IngestError::Decode(format!(
                        "run (row {row}, start {start}, len {len}) outside {width}x{height}"
                    )));
                }
                for col in start..start + len {
                    mask.set(col, row).expect("bounds checked");
                }
            }
            Ok(mask)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherTag {
    Clear,
    Rain,
    Snow,
}

/// A registered camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub camera_id: String,
    #[serde(default)]
    pub name: String,
    pub frame_rate_fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_type_override: Option<RoadType>,
    #[serde(default)]
    pub counting_lines: Vec<CountingLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather_tag: Option<WeatherTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<(f64, f64)>,
}

impl CameraRecord {
    pub fn new(camera_id: impl Into<String>, frame_rate_fps: f64) -> Self {
        let camera_id = camera_id.into();
        Self {
            name: camera_id.clone(),
            camera_id,
            frame_rate_fps,
            road_type_override: None,
            counting_lines: Vec::new(),
            weather_tag: None,
            location: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.camera_id.is_empty() {
            return Err(IngestError::Registry("empty camera_id".into()));
        }
        if !(self.frame_rate_fps.is_finite() && self.frame_rate_fps > 0.0) {
            return Err(IngestError::Registry(format!(
                "camera {}: frame rate must be positive, got {}",
                self.camera_id, self.frame_rate_fps
            )));
        }
        for line in &self.counting_lines {
            line.validate()
                .map_err(|e| IngestError::Registry(format!("camera {}: {e}", self.camera_id)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    camera: Vec<CameraRecord>,
}

/// Parses a TOML registry of `[[camera]]` tables.
pub fn parse_camera_registry(text: &str) -> Result<Vec<CameraRecord>, IngestError> {
    let file: RegistryFile = toml::from_str(text).map_err(|e| IngestError::Registry(e.to_string()))?;
    let mut seen = HashSet::new();
    for cam in &file.camera {
        cam.validate()?;
        if !seen.insert(cam.camera_id.clone()) {
            return Err(IngestError::DuplicateCamera(cam.camera_id.clone()));
        }
    }
    Ok(file.camera)
}

pub fn load_camera_registry(path: &Path) -> Result<Vec<CameraRecord>, IngestError> {
    parse_camera_registry(&std::fs::read_to_string(path)?)
}

pub fn serialize_camera_registry(cameras: &[CameraRecord]) -> Result<String, IngestError> {
    toml::to_string(&RegistryFile { camera: cameras.to_vec() }).map_err(|e| IngestError::Registry(e.to_string()))
}
