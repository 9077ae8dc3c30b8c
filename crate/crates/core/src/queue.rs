//! Queue length from masks, adaptive severity thresholds and severity heatmaps.
//!
//! Pixel length is the diameter of the set-pixel centers of a queue mask.
//! Thresholds come from per-minute-of-day quartiles across days:
//! with `base = max_b mean(Q1(b), Q2(b), Q3(b))`,
//! `L = base + k·std_b(Q1)`, `M = base + k·std_b(Q2)`, `H = base + k·std_b(Q3)`.
//! Quartiles interpolate linearly between order statistics; std is the
//! population standard deviation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BitMask;
use crate::ingest::decode_mask;
use crate::scalar::Scalar;
use crate::types::MaskShape;

pub const MS_PER_DAY: i64 = 86_400_000;
pub const MS_PER_MINUTE: i64 = 60_000;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("empty mask")]
    EmptyMask,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("queue sample line {line}: {msg}")]
    Sample { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn dist2(a: (i64, i64), b: (i64, i64)) -> i64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Convex hull in counter-clockwise order without collinear points (monotone chain).
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Squared diameter of a convex polygon via rotating calipers.
fn hull_diameter_sq(hull: &[(i64, i64)]) -> i64 {
    let n = hull.len();
    match n {
        0 | 1 => return 0,
        2 => return dist2(hull[0], hull[1]),
        _ => {}
    }
    let mut best = 0;
    let mut j = 1;
    for i in 0..n {
        let ni = (i + 1) % n;
        while cross(hull[i], hull[ni], hull[(j + 1) % n]) > cross(hull[i], hull[ni], hull[j]) {
            j = (j + 1) % n;
        }
        best = best.max(dist2(hull[i], hull[j])).max(dist2(hull[ni], hull[j]));
    }
    best
}

/// Largest Euclidean distance between two set-pixel centers.
pub fn mask_pixel_length<T: Scalar>(mask: &BitMask) -> Result<T, QueueError> {
    if mask.is_empty() {
        return Err(QueueError::EmptyMask);
    }
    let pts: Vec<(i64, i64)> = mask.pixels().map(|(x, y)| (x as i64, y as i64)).collect();
    let d2 = hull_diameter_sq(&convex_hull(&pts));
    Ok(T::from_f64_lossy(d2 as f64).sqrt())
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> T {
    match sorted.len() {
        0 => T::nan(),
        1 => sorted[0],
        n => {
            let pos = q * T::from_usize_lossy(n - 1);
            let lo = pos.floor();
            let i = lo.to_usize().unwrap_or(0).min(n - 1);
            let frac = pos - lo;
            if i + 1 >= n {
                sorted[n - 1]
            } else {
                sorted[i] + (sorted[i + 1] - sorted[i]) * frac
            }
        }
    }
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(xs.len())
}

/// Population standard deviation.
pub fn population_std<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    let var = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m)) / T::from_usize_lossy(xs.len());
    var.sqrt()
}

/// First, second and third quartile of unsorted data.
pub fn quartiles<T: Scalar>(values: &[T]) -> [T; 3] {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let q = |p: f64| quantile_sorted(&v, T::from_f64_lossy(p));
    [q(0.25), q(0.5), q(0.75)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityThresholds<T = f64> {
    pub low: T,
    pub medium: T,
    pub high: T,
    pub k: T,
}

impl<T: Scalar> SeverityThresholds<T> {
    /// Cut points in ascending order.
    pub fn sorted(&self) -> [T; 3] {
        let mut v = [self.low, self.medium, self.high];
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v
    }
}

/// Thresholds from per-bin PL values (one `Vec` per time-of-day bin; empty bins skipped).
pub fn thresholds_from_bins<T: Scalar>(bins: &[Vec<T>], k: T) -> Result<SeverityThresholds<T>, QueueError> {
    let qs: Vec<[T; 3]> = bins.iter().filter(|b| !b.is_empty()).map(|b| quartiles(b)).collect();
    if qs.is_empty() {
        return Err(QueueError::InsufficientData("no queue samples".into()));
    }
    let three = T::from_f64_lossy(3.0);
    let base = qs
        .iter()
        .map(|q| (q[0] + q[1] + q[2]) / three)
        .fold(T::neg_infinity(), T::max);
    let series = |i: usize| qs.iter().map(|q| q[i]).collect::<Vec<T>>();
    Ok(SeverityThresholds {
        low: base + k * population_std(&series(0)),
        medium: base + k * population_std(&series(1)),
        high: base + k * population_std(&series(2)),
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub k: f64,
    pub bin_minutes: u32,
    pub min_history_days: u32,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { k: 1.0, bin_minutes: 1, min_history_days: 7 }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), QueueError> {
        if self.bin_minutes == 0 || 1440 % self.bin_minutes != 0 {
            return Err(QueueError::Config(format!("bin_minutes {} must divide 1440", self.bin_minutes)));
        }
        if !self.k.is_finite() {
            return Err(QueueError::Config("k must be finite".into()));
        }
        Ok(())
    }

    pub fn bins_per_day(&self) -> usize {
        (1440 / self.bin_minutes) as usize
    }

    pub fn bin_of(&self, ts_ms: i64) -> usize {
        (ts_ms.rem_euclid(MS_PER_DAY) / (self.bin_minutes as i64 * MS_PER_MINUTE)) as usize
    }
}

pub fn day_of(ts_ms: i64) -> i64 {
    ts_ms.div_euclid(MS_PER_DAY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub camera_id: String,
    pub timestamp_ms: i64,
    pub pixel_length: f64,
    pub mask_id: Option<String>,
}

/// Adaptive thresholds over at least `min_history_days` distinct days of samples.
pub fn compute_thresholds(history: &[QueueSample], cfg: &ThresholdConfig) -> Result<SeverityThresholds, QueueError> {
    cfg.validate()?;
    let days: BTreeSet<i64> = history.iter().map(|s| day_of(s.timestamp_ms)).collect();
    if days.len() < cfg.min_history_days.max(1) as usize {
        return Err(QueueError::InsufficientData(format!(
            "history covers {} day(s), need {}",
            days.len(),
            cfg.min_history_days
        )));
    }
    let mut bins = vec![Vec::new(); cfg.bins_per_day()];
    for s in history {
        bins[cfg.bin_of(s.timestamp_ms)].push(s.pixel_length);
    }
    thresholds_from_bins(&bins, cfg.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    Low,
    Medium,
    High,
}

impl SeverityLevel {
    pub fn letter(self) -> char {
        match self {
            SeverityLevel::Low => 'L',
            SeverityLevel::Medium => 'M',
            SeverityLevel::High => 'H',
        }
    }
}

/// `<= l` low, `<= m` medium, above high, with `(l, m)` the two smallest cut points.
pub fn classify_severity<T: Scalar>(length: T, th: &SeverityThresholds<T>) -> SeverityLevel {
    let [l, m, _] = th.sorted();
    if length <= l {
        SeverityLevel::Low
    } else if length <= m {
        SeverityLevel::Medium
    } else {
        SeverityLevel::High
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub mean_pixel_length: f64,
    pub severity: SeverityLevel,
}

/// Severity grid: one row per day, one column per time-of-day bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityHeatmap {
    pub first_day: i64,
    pub bin_minutes: u32,
    pub cells: Vec<Vec<Option<HeatCell>>>,
}

impl SeverityHeatmap {
    pub fn days(&self) -> usize {
        self.cells.len()
    }

    pub fn date(&self, row: usize) -> NaiveDate {
        DateTime::from_timestamp((self.first_day + row as i64) * 86_400, 0)
            .map(|d| d.date_naive())
            .unwrap_or_default()
    }

    pub fn bin_label(&self, col: usize) -> String {
        let minute = col as u32 * self.bin_minutes;
        format!("{:02}:{:02}", minute / 60, minute % 60)
    }

    /// CSV grid with `L`, `M`, `H` or `-` cells.
    pub fn to_csv(&self) -> String {
        let cols = self.cells.first().map_or(1440 / self.bin_minutes.max(1) as usize, Vec::len);
        let mut s = String::from("date");
        for c in 0..cols {
            let _ = write!(s, ",{}", self.bin_label(c));
        }
        s.push('\n');
        for (r, row) in self.cells.iter().enumerate() {
            let _ = write!(s, "{}", self.date(r));
            for cell in row {
                s.push(',');
                s.push(cell.map_or('-', |c| c.severity.letter()));
            }
            s.push('\n');
        }
        s
    }

    /// JSON variant carrying raw mean lengths.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .cells
            .iter()
            .enumerate()
            .map(|(r, row)| {
                serde_json::json!({
                    "date": self.date(r).to_string(),
                    "mean_pl": row.iter().map(|c| c.map(|c| c.mean_pixel_length)).collect::<Vec<_>>(),
                    "severity": row.iter().map(|c| c.map(|c| c.severity)).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "bin_minutes": self.bin_minutes, "rows": rows })
    }
}

/// Heatmap over `num_days` days starting at day index `first_day` (days since the Unix epoch, UTC).
pub fn severity_heatmap(
    samples: &[QueueSample],
    th: &SeverityThresholds,
    first_day: i64,
    num_days: usize,
    bin_minutes: u32,
) -> Result<SeverityHeatmap, QueueError> {
    let cfg = ThresholdConfig { bin_minutes, ..Default::default() };
    cfg.validate()?;
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for s in samples {
        let day = day_of(s.timestamp_ms) - first_day;
        if day < 0 || day as usize >= num_days {
            continue;
        }
        let e = acc.entry((day as usize, cfg.bin_of(s.timestamp_ms))).or_default();
        e.0 += s.pixel_length;
        e.1 += 1;
    }
    let mut cells = vec![vec![None; cfg.bins_per_day()]; num_days];
    for ((r, c), (sum, n)) in acc {
        let m = sum / n as f64;
        cells[r][c] = Some(HeatCell { mean_pixel_length: m, severity: classify_severity(m, th) });
    }
    Ok(SeverityHeatmap { first_day, bin_minutes, cells })
}

#[derive(Debug, Deserialize, Serialize)]
struct SampleRecord {
    cam: String,
    ts_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_id: Option<String>,
}

/// Reads queue samples, one JSON object per line, with either a `pl` value or
/// a `mask` plus `width`/`height` from which the pixel length is measured.
pub fn read_queue_samples<R: BufRead>(input: R) -> Result<Vec<QueueSample>, QueueError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| QueueError::Sample { line: i + 1, msg };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let pl = match (rec.pl, &rec.mask) {
            (Some(pl), _) => pl,
            (None, Some(shape)) => {
                let (w, h) = rec.width.zip(rec.height).ok_or_else(|| err("mask needs width and height".into()))?;
                let mask = decode_mask(shape, w, h).map_err(|e| err(e.to_string()))?;
                mask_pixel_length(&mask).map_err(|e| err(e.to_string()))?
            }
            (None, None) => return Err(err("sample needs pl or mask".into())),
        };
        if !(pl.is_finite() && pl >= 0.0) {
            return Err(err(format!("pixel length {pl} must be finite and >= 0")));
        }
        out.push(QueueSample { camera_id: rec.cam, timestamp_ms: rec.ts_ms, pixel_length: pl, mask_id: rec.mask_id });
    }
    Ok(out)
}

pub fn write_queue_samples<W: Write>(out: &mut W, samples: &[QueueSample]) -> Result<(), QueueError> {
    for s in samples {
        let rec = SampleRecord {
            cam: s.camera_id.clone(),
            ts_ms: s.timestamp_ms,
            pl: Some(s.pixel_length),
            mask: None,
            width: None,
            height: None,
            mask_id: s.mask_id.clone(),
        };
        serde_json::to_writer(&mut *out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A queue observation carried as a mask rather than a measured length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueMaskSample {
    pub camera_id: String,
    pub timestamp_ms: i64,
    pub mask: MaskShape,
    pub width: u32,
    pub height: u32,
    pub mask_id: Option<String>,
}

pub fn write_queue_masks<W: Write>(out: &mut W, samples: &[QueueMaskSample]) -> Result<(), QueueError> {
    for s in samples {
        let rec = SampleRecord {
            cam: s.camera_id.clone(),
            ts_ms: s.timestamp_ms,
            pl: None,
            mask: Some(s.mask.clone()),
            width: Some(s.width),
            height: Some(s.height),
            mask_id: s.mask_id.clone(),
        };
        serde_json::to_writer(&mut *out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_length_examples() {
        let one = BitMask::from_pixels(5, 5, [(2, 2)]).unwrap();
        assert_eq!(mask_pixel_length::<f64>(&one).unwrap(), 0.0);

        let run = BitMask::from_pixels(200, 1, (0..100).map(|x| (x, 0))).unwrap();
        assert_eq!(mask_pixel_length::<f64>(&run).unwrap(), 99.0);

        let ell = BitMask::from_pixels(10, 10, (0..10).map(|i| (i, 0)).chain((0..10).map(|i| (0, i)))).unwrap();
        assert!((mask_pixel_length::<f64>(&ell).unwrap() - 162f64.sqrt()).abs() < 1e-12);
        assert!((mask_pixel_length::<f32>(&ell).unwrap() - 12.727_922).abs() < 1e-4);

        assert!(matches!(mask_pixel_length::<f64>(&BitMask::new(3, 3)), Err(QueueError::EmptyMask)));
    }

    #[test]
    fn hull_drops_collinear_points() {
        let h = convex_hull(&[(0, 0), (1, 0), (2, 0), (2, 2), (0, 2), (1, 1)]);
        assert_eq!(h, vec![(0, 0), (2, 0), (2, 2), (0, 2)]);
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0]), [1.75, 2.5, 3.25]);
        assert_eq!(quartiles(&[7.0]), [7.0, 7.0, 7.0]);
        assert_eq!(population_std(&[1.0, 2.0]), 0.5);
    }

    #[test]
    fn threshold_examples() {
        let constant = vec![vec![4.0; 5], vec![4.0; 5]];
        let th = thresholds_from_bins(&constant, 1.0).unwrap();
        assert_eq!((th.low, th.medium, th.high), (4.0, 4.0, 4.0));

        // Bins whose quartiles are (1, 2, 3) and (2, 4, 6).
        let bins: Vec<Vec<f64>> = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.0, 2.0, 4.0, 6.0, 8.0]];
        let th = thresholds_from_bins(&bins, 1.0).unwrap();
        assert!((th.low - 4.5).abs() < 1e-12);
        assert!((th.medium - 5.0).abs() < 1e-12);
        assert!((th.high - 5.5).abs() < 1e-12);

        let th0 = thresholds_from_bins(&bins, 0.0).unwrap();
        assert_eq!((th0.low, th0.medium, th0.high), (4.0, 4.0, 4.0));
    }

    #[test]
    fn insufficient_history() {
        let samples: Vec<_> = (0..3)
            .map(|d| QueueSample { camera_id: "c".into(), timestamp_ms: d * MS_PER_DAY, pixel_length: 1.0, mask_id: None })
            .collect();
        assert!(matches!(compute_thresholds(&samples, &ThresholdConfig::default()), Err(QueueError::InsufficientData(_))));
        let cfg = ThresholdConfig { min_history_days: 3, ..Default::default() };
        assert!(compute_thresholds(&samples, &cfg).is_ok());
    }

    #[test]
    fn severity_binning() {
        let th = SeverityThresholds { low: 10.0, medium: 20.0, high: 30.0, k: 1.0 };
        assert_eq!(classify_severity(0.0, &th), SeverityLevel::Low);
        assert_eq!(classify_severity(10.0, &th), SeverityLevel::Low);
        assert_eq!(classify_severity(15.0, &th), SeverityLevel::Medium);
        assert_eq!(classify_severity(31.0, &th), SeverityLevel::High);
        assert_eq!(classify_severity(25.0, &th), SeverityLevel::High);
        let unordered = SeverityThresholds { low: 30.0, medium: 10.0, high: 20.0, k: 1.0 };
        assert_eq!(classify_severity(15.0, &unordered), SeverityLevel::Medium);
    }

    #[test]
    fn heatmap_basics() {
        let th = SeverityThresholds { low: 10.0, medium: 20.0, high: 30.0, k: 1.0 };
        let empty = severity_heatmap(&[], &th, 0, 2, 60).unwrap();
        assert_eq!(empty.days(), 2);
        assert!(empty.cells.iter().flatten().all(Option::is_none));

        let samples: Vec<_> = (0..48)
            .map(|h| QueueSample { camera_id: "c".into(), timestamp_ms: h * 3_600_000, pixel_length: 3.0, mask_id: None })
            .collect();
        let hm = severity_heatmap(&samples, &th, 0, 2, 60).unwrap();
        assert!(hm.cells.iter().flatten().all(|c| c.unwrap().severity == SeverityLevel::Low));
        let csv = hm.to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("date,00:00,01:00"));
        assert!(lines.next().unwrap().starts_with("1970-01-01,L,L"));
        assert_eq!(hm.to_json()["rows"][1]["date"], "1970-01-02");
    }

    #[test]
    fn samples_from_masks() {
        let text = r#"{"cam":"c","ts_ms":0,"pl":12.5}
{"cam":"c","ts_ms":60000,"mask":{"rle":[[0,0,10]]},"width":20,"height":2}
"#;
        let s = read_queue_samples(text.as_bytes()).unwrap();
        assert_eq!(s[0].pixel_length, 12.5);
        assert_eq!(s[1].pixel_length, 9.0);
        assert!(read_queue_samples(r#"{"cam":"c","ts_ms":0}"#.as_bytes()).is_err());
    }
}
