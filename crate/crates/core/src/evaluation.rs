//! Detection, tracking, anomaly and counting metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::AnomalyEvent;
use crate::geometry::{iou_unchecked, BBox, Point2};
use crate::types::{ClassLabel, Track};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("undefined metric {0}: zero denominator")]
    UndefinedMetric(&'static str),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    /// `TP / (TP + FP + TN + FN)`, the accuracy formula as commonly misprinted.
    pub accuracy_paper: f64,
    /// `(TP + TN) / (TP + FP + TN + FN)`.
    pub accuracy_standard: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, EvalError> {
    if den == 0 {
        Err(EvalError::UndefinedMetric(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Result<f64, EvalError> {
    if precision + recall == 0.0 {
        return Err(EvalError::UndefinedMetric("f1"));
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn classification_metrics(c: &BinaryCounts) -> Result<ClassificationMetrics, EvalError> {
    let total = c.tp + c.fp + c.tn + c.fn_;
    let precision = ratio(c.tp, c.tp + c.fp, "precision")?;
    let recall = ratio(c.tp, c.tp + c.fn_, "recall")?;
    Ok(ClassificationMetrics {
        precision,
        recall,
        accuracy_paper: ratio(c.tp, total, "accuracy")?,
        accuracy_standard: ratio(c.tp + c.tn, total, "accuracy")?,
        f1: f1_score(precision, recall)?,
    })
}

/// Row-normalized matrix with rows = predicted class, columns = true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassLabel>,
    pub cells: Vec<Vec<f64>>,
    /// Number of pairs behind each row; rows without support stay all-zero.
    pub row_support: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn row(&self, predicted: ClassLabel) -> &[f64] {
        &self.cells[predicted.index()]
    }
}

pub fn confusion_matrix(pairs: &[(ClassLabel, ClassLabel)]) -> ConfusionMatrix {
    let mut counts = vec![vec![0u64; 5]; 5];
    for &(p, t) in pairs {
        counts[p.index()][t.index()] += 1;
    }
    let row_support: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cells = counts
        .iter()
        .zip(&row_support)
        .map(|(r, &n)| r.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect())
        .collect();
    ConfusionMatrix { classes: ClassLabel::ALL.to_vec(), cells, row_support }
}

/// Parses labels and builds the matrix; unknown labels are a validation error.
pub fn confusion_matrix_from_labels(pairs: &[(&str, &str)]) -> Result<ConfusionMatrix, EvalError> {
    let parsed = pairs
        .iter()
        .map(|(p, t)| Ok((p.parse().map_err(EvalError::Validation)?, t.parse().map_err(EvalError::Validation)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(confusion_matrix(&parsed))
}

/// A (track id, box) pair observed in one frame.
fn frames_of(tracks: &[Track]) -> BTreeMap<u64, Vec<(u64, BBox<f64>, ClassLabel)>> {
    let mut by_frame: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for t in tracks {
        for d in &t.detections {
            by_frame.entry(d.frame_index).or_default().push((t.track_id, d.bbox, d.class_label));
        }
    }
    by_frame
}

/// Identity switches per ground-truth vehicle.
///
/// In each frame every ground-truth box is matched to the predicted box with
/// the highest IOU (at least `min_iou`, ties to the lower track id). A switch
/// is a frame where that track id differs from the vehicle's previous match.
pub fn switch_rate(predicted: &[Track], truth: &[Track], min_iou: f64) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::UndefinedMetric("switch_rate"));
    }
    let pred_frames = frames_of(predicted);
    let mut switches = 0u64;
    for gt in truth {
        let mut prev: Option<u64> = None;
        for d in &gt.detections {
            let Some(cands) = pred_frames.get(&d.frame_index) else { continue };
            let best = cands
                .iter()
                .map(|(id, b, _)| (*id, iou_unchecked(&d.bbox, b)))
                .filter(|&(_, v)| v >= min_iou)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((id, _)) = best {
                if prev.is_some_and(|p| p != id) {
                    switches += 1;
                }
                prev = Some(id);
            }
        }
    }
    Ok(switches as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnomalyMatch {
    /// `(prediction index, truth index, signed start error in seconds)`.
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

impl AnomalyMatch {
    pub fn time_errors(&self) -> Vec<f64> {
        self.tp.iter().map(|&(_, _, e)| e).collect()
    }

    pub fn f1(&self) -> Result<f64, EvalError> {
        let tp = self.tp.len() as u64;
        let p = ratio(tp, tp + self.fp.len() as u64, "precision")?;
        let r = ratio(tp, tp + self.fn_.len() as u64, "recall")?;
        if tp == 0 {
            return Ok(0.0);
        }
        f1_score(p, r)
    }
}

/// Greedy one-to-one matching by ascending start-time gap; each truth matches at most once.
pub fn match_anomalies(predicted: &[AnomalyEvent], truth: &[AnomalyEvent], window_s: f64) -> AnomalyMatch {
    let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
    let window_ms = (window_s * 1000.0).round() as i64;
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let gap = (p.start_ts_ms - t.start_ts_ms).abs();
            if gap <= window_ms {
                pairs.push((gap, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut p_used = vec![false; predicted.len()];
    let mut t_used = vec![false; truth.len()];
    let mut out = AnomalyMatch::default();
    for (_, i, j) in pairs {
        if p_used[i] || t_used[j] {
            continue;
        }
        p_used[i] = true;
        t_used[j] = true;
        out.tp.push((i, j, (predicted[i].start_ts_ms - truth[j].start_ts_ms) as f64 / 1000.0));
    }
    out.tp.sort_by_key(|&(i, _, _)| i);
    out.fp = (0..predicted.len()).filter(|&i| !p_used[i]).collect();
    out.fn_ = (0..truth.len()).filter(|&j| !t_used[j]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub f1: f64,
    pub rmse_s: f64,
    pub nrmse: f64,
    pub s3: f64,
}

pub const NRMSE_MIN_S: f64 = 0.0;
pub const NRMSE_MAX_S: f64 = 300.0;

/// `S3 = F1 * (1 - NRMSE)` with RMSE clamped into `[nrmse_min, nrmse_max]` and min-max normalized.
pub fn s3_from_rmse(f1: f64, rmse_s: f64, nrmse_min: f64, nrmse_max: f64) -> AnomalyScore {
    let nrmse = (rmse_s.clamp(nrmse_min, nrmse_max) - nrmse_min) / (nrmse_max - nrmse_min);
    AnomalyScore { f1, rmse_s, nrmse, s3: f1 * (1.0 - nrmse) }
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn s3_score(f1: f64, tp_time_errors: &[f64], nrmse_min: f64, nrmse_max: f64) -> AnomalyScore {
    s3_from_rmse(f1, rmse(tp_time_errors), nrmse_min, nrmse_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    FP,
    FN,
}

/// Per-category 2-D histograms of box centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionHeatmaps {
    pub rows: usize,
    pub cols: usize,
    pub tp: Vec<Vec<u64>>,
    pub fp: Vec<Vec<u64>>,
    pub fn_: Vec<Vec<u64>>,
}

impl DetectionHeatmaps {
    pub fn grid(&self, o: Outcome) -> &Vec<Vec<u64>> {
        match o {
            Outcome::TP => &self.tp,
            Outcome::FP => &self.fp,
            Outcome::FN => &self.fn_,
        }
    }

    pub fn total(&self, o: Outcome) -> u64 {
        self.grid(o).iter().flatten().sum()
    }
}

pub fn detection_heatmap(
    outcomes: &[(Outcome, Point2<f64>)],
    grid: (usize, usize),
    image_size: (f64, f64),
) -> Result<DetectionHeatmaps, EvalError> {
    let (rows, cols) = grid;
    let (w, h) = image_size;
    if rows == 0 || cols == 0 || !(w > 0.0 && h > 0.0) {
        return Err(EvalError::Validation("grid and image size must be positive".into()));
    }
    let zero = vec![vec![0u64; cols]; rows];
    let mut out = DetectionHeatmaps { rows, cols, tp: zero.clone(), fp: zero.clone(), fn_: zero };
    for &(o, c) in outcomes {
        if !(c.x >= 0.0 && c.x <= w && c.y >= 0.0 && c.y <= h) {
            return Err(EvalError::Validation(format!("center ({}, {}) outside {w}x{h}", c.x, c.y)));
        }
        let r = ((c.y / h * rows as f64) as usize).min(rows - 1);
        let col = ((c.x / w * cols as f64) as usize).min(cols - 1);
        let g = match o {
            Outcome::TP => &mut out.tp,
            Outcome::FP => &mut out.fp,
            Outcome::FN => &mut out.fn_,
        };
        g[r][col] += 1;
    }
    Ok(out)
}

/// Per-frame detection outcomes: greedy IOU matching (descending IOU, at least
/// `min_iou`) of predicted boxes to ground truth. A match with the wrong class
/// yields both an FP and an FN. Returned with the class pairs of every match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionMatch {
    pub outcomes: Vec<(Outcome, Point2<f64>, ClassLabel)>,
    /// `(predicted class, true class)` of matched boxes.
    pub class_pairs: Vec<(ClassLabel, ClassLabel)>,
}

pub fn match_detections(predicted: &[Track], truth: &[Track], min_iou: f64) -> DetectionMatch {
    let pf = frames_of(predicted);
    let tf = frames_of(truth);
    let mut out = DetectionMatch::default();
    let mut frames: Vec<u64> = pf.keys().chain(tf.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();
    let empty = Vec::new();
    for f in frames {
        let p = pf.get(&f).unwrap_or(&empty);
        let t = tf.get(&f).unwrap_or(&empty);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, (_, pb, _)) in p.iter().enumerate() {
            for (j, (_, tb, _)) in t.iter().enumerate() {
                let v = iou_unchecked(pb, tb);
                if v >= min_iou {
                    pairs.push((v, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut pu = vec![false; p.len()];
        let mut tu = vec![false; t.len()];
        for (_, i, j) in pairs {
            if pu[i] || tu[j] {
                continue;
            }
            pu[i] = true;
            tu[j] = true;
            let (pc, tc) = (p[i].2, t[j].2);
            out.class_pairs.push((pc, tc));
            if pc == tc {
                out.outcomes.push((Outcome::TP, t[j].1.center(), tc));
            } else {
                out.outcomes.push((Outcome::FP, p[i].1.center(), pc));
                out.outcomes.push((Outcome::FN, t[j].1.center(), tc));
            }
        }
        for (i, used) in pu.iter().enumerate() {
            if !used {
                out.outcomes.push((Outcome::FP, p[i].1.center(), p[i].2));
            }
        }
        for (j, used) in tu.iter().enumerate() {
            if !used {
                out.outcomes.push((Outcome::FN, t[j].1.center(), t[j].2));
            }
        }
    }
    out
}

/// F1 per class from detection outcomes; classes without any outcome are omitted.
pub fn per_class_f1(m: &DetectionMatch) -> BTreeMap<ClassLabel, f64> {
    let mut counts: HashMap<ClassLabel, BinaryCounts> = HashMap::new();
    for &(o, _, c) in &m.outcomes {
        let e = counts.entry(c).or_default();
        match o {
            Outcome::TP => e.tp += 1,
            Outcome::FP => e.fp += 1,
            Outcome::FN => e.fn_ += 1,
        }
    }
    counts
        .into_iter()
        .map(|(c, b)| {
            let f1 = if b.tp == 0 { 0.0 } else { classification_metrics(&b).map(|m| m.f1).unwrap_or(0.0) };
            (c, f1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::AnomalyStatus;
    use crate::types::Detection;

    #[test]
    fn classification_examples() {
        let m = classification_metrics(&BinaryCounts::new(1, 0, 0, 0)).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let m = classification_metrics(&BinaryCounts::new(450, 50, 460, 40)).unwrap();
        assert!((m.accuracy_standard - 0.91).abs() < 1e-12);
        assert!((m.accuracy_paper - 0.45).abs() < 1e-12);

        assert!((f1_score(0.92165122, 0.7367003).unwrap() - 0.81886228).abs() < 1e-6);
        assert_eq!(
            classification_metrics(&BinaryCounts::new(0, 0, 3, 1)),
            Err(EvalError::UndefinedMetric("precision"))
        );
    }

    #[test]
    fn confusion_examples() {
        let perfect: Vec<_> = ClassLabel::ALL.iter().map(|&c| (c, c)).collect();
        let m = confusion_matrix(&perfect);
        for (i, row) in m.cells.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let m = confusion_matrix_from_labels(&[("car", "car"), ("car", "car"), ("car", "truck")]).unwrap();
        assert_eq!(m.row(ClassLabel::Car), &[0.0, 0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0]);
        assert!(confusion_matrix_from_labels(&[("car", "van")]).is_err());
    }

    fn track(id: u64, frames: std::ops::Range<u64>, x: f64) -> Track {
        let mut it = frames.map(|f| {
            Detection::new(f, f as i64 * 100, ClassLabel::Car, BBox::new(x + f as f64, 0.0, 10.0, 10.0).unwrap(), 0.9)
        });
        let mut t = Track::new(id, it.next().unwrap());
        t.detections.extend(it);
        t
    }

    #[test]
    fn switch_rate_examples() {
        let gt = vec![track(1, 0..10, 0.0), track(2, 0..10, 100.0)];
        assert_eq!(switch_rate(&gt, &gt, 0.5).unwrap(), 0.0);

        let gt1 = vec![track(1, 0..10, 0.0)];
        let split = vec![track(7, 0..5, 0.0), track(8, 6..10, 0.0)];
        assert_eq!(switch_rate(&split, &gt1, 0.5).unwrap(), 1.0);

        assert!(switch_rate(&gt, &[], 0.5).is_err());
    }

    fn anomaly(start_s: i64) -> AnomalyEvent {
        AnomalyEvent {
            camera_id: "c".into(),
            track_id: 0,
            location: Point2::new(0.0, 0.0),
            direction: None,
            start_ts_ms: start_s * 1000,
            end_ts_ms: None,
            last_seen_ts_ms: start_s * 1000,
            status: AnomalyStatus::Confirmed,
            rejection_reason: None,
        }
    }

    #[test]
    fn anomaly_matching_examples() {
        let m = match_anomalies(&[anomaly(100)], &[anomaly(105)], 10.0);
        assert_eq!((m.tp.len(), m.fp.len(), m.fn_.len()), (1, 0, 0));
        assert_eq!(m.time_errors(), vec![-5.0]);

        let m = match_anomalies(&[anomaly(100)], &[anomaly(115)], 10.0);
        assert_eq!((m.tp.len(), m.fp.len(), m.fn_.len()), (0, 1, 1));

        let m = match_anomalies(&[anomaly(100), anomaly(104)], &[anomaly(103)], 10.0);
        assert_eq!((m.tp.len(), m.fp.len(), m.fn_.len()), (1, 1, 0));
        assert_eq!(m.tp[0].0, 1);
    }

    #[test]
    fn s3_examples() {
        let s = s3_from_rmse(0.8333, 154.7741, 0.0, 300.0);
        assert!((s.s3 - 0.4034).abs() < 5e-4);
        assert_eq!(s3_score(1.0, &[0.0, 0.0], 0.0, 300.0).s3, 1.0);
        let sat = s3_from_rmse(0.9, 450.0, 0.0, 300.0);
        assert_eq!((sat.nrmse, sat.s3), (1.0, 0.0));
        assert!((rmse(&[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heatmap_examples() {
        let h = detection_heatmap(&[], (2, 2), (100.0, 100.0)).unwrap();
        assert_eq!(h.total(Outcome::TP) + h.total(Outcome::FP) + h.total(Outcome::FN), 0);
        let h = detection_heatmap(&[(Outcome::TP, Point2::new(50.0, 50.0))], (2, 2), (100.0, 100.0)).unwrap();
        assert_eq!(h.tp, vec![vec![0, 0], vec![0, 1]]);
        assert!(detection_heatmap(&[(Outcome::FN, Point2::new(101.0, 5.0))], (2, 2), (100.0, 100.0)).is_err());
    }
}
