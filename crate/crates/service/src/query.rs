//! Keyword search over camera statuses and history folding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use trafficmon::ingest::WeatherTag;
use trafficmon::queue::{SeverityLevel, MS_PER_MINUTE};

use crate::pipeline::{AnomalyRef, CameraStatus, CountEntry, MinuteAggregate, QueueSeverity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub cameras: Vec<CameraStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

type Predicate = fn(&CameraStatus) -> bool;

fn predicate(word: &str) -> Option<Predicate> {
    Some(match word {
        "congestion" | "congested" => |s| matches!(s.queue_severity, QueueSeverity::Medium | QueueSeverity::High),
        "anomaly" | "anomalies" | "stalled" => |s| s.active_anomalies > 0,
        "rain" => |s| s.weather_tag == Some(WeatherTag::Rain),
        "snow" => |s| s.weather_tag == Some(WeatherTag::Snow),
        "clear" => |s| s.weather_tag == Some(WeatherTag::Clear),
        _ => return None,
    })
}

/// Filters cameras by space- or comma-separated keywords, all of which must hold.
/// Any unknown keyword yields an empty result with a warning naming it.
pub fn query_cameras(statuses: &[CameraStatus], q: &str) -> QueryResult {
    let words: Vec<String> =
        q.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()).map(str::to_lowercase).collect();
    let mut preds = Vec::new();
    let mut unknown = Vec::new();
    for w in &words {
        match predicate(w) {
            Some(p) => preds.push(p),
            None => unknown.push(w.clone()),
        }
    }
    if !unknown.is_empty() {
        return QueryResult {
            cameras: Vec::new(),
            warning: Some(format!(
                "unknown keyword(s): {}; known: congestion, anomaly, stalled, rain, snow, clear",
                unknown.join(", ")
            )),
        };
    }
    QueryResult { cameras: statuses.iter().filter(|s| preds.iter().all(|p| p(s))).cloned().collect(), warning: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Minute,
    Hour,
}

impl Resolution {
    pub fn step_ms(self) -> i64 {
        match self {
            Resolution::Minute => MS_PER_MINUTE,
            Resolution::Hour => 60 * MS_PER_MINUTE,
        }
    }
}

/// One slot of a history series; `data: None` marks a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub ts: i64,
    pub data: Option<HistoryData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryData {
    pub mean_pl: Option<f64>,
    pub severity: Option<SeverityLevel>,
    pub counts: Vec<CountEntry>,
    pub anomalies: Vec<AnomalyRef>,
}

/// Folds time-ordered minute aggregates to `resolution` and fills gaps between
/// the first and last slot with explicit empty points.
///
/// An hour's PL is the mean of its minute means, counts are summed and its
/// severity is the worst minute severity.
pub fn fold_history(aggregates: &[MinuteAggregate], resolution: Resolution) -> Vec<HistoryPoint> {
    let step = resolution.step_ms();
    let mut slots: BTreeMap<i64, Vec<&MinuteAggregate>> = BTreeMap::new();
    for a in aggregates {
        slots.entry(a.minute_start_ts.div_euclid(step) * step).or_default().push(a);
    }
    let (Some(&first), Some(&last)) = (slots.keys().next(), slots.keys().next_back()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(((last - first) / step + 1) as usize);
    let mut ts = first;
    while ts <= last {
        let data = slots.get(&ts).map(|group| {
            let pls: Vec<f64> = group.iter().filter_map(|a| a.mean_pl).collect();
            let mut counts: BTreeMap<(String, _, _), u64> = BTreeMap::new();
            for a in group {
                for c in &a.counts {
                    *counts.entry((c.line.clone(), c.class, c.direction)).or_default() += c.count;
                }
            }
            HistoryData {
                mean_pl: (!pls.is_empty()).then(|| pls.iter().sum::<f64>() / pls.len() as f64),
                severity: group.iter().filter_map(|a| a.severity).max(),
                counts: counts
                    .into_iter()
                    .map(|((line, class, direction), count)| CountEntry { line, class, direction, count })
                    .collect(),
                anomalies: group.iter().flat_map(|a| a.anomalies.iter().copied()).collect(),
            }
        });
        out.push(HistoryPoint { ts, data });
        ts += step;
    }
    out
}
