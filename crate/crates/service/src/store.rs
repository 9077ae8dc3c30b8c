//! Append-only daily segment files: `{root}/{camera_id}/{YYYY-MM-DD}.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::DateTime;
use trafficmon::ingest::{parse_camera_registry, serialize_camera_registry, CameraRecord};
use trafficmon::queue::{day_of, MS_PER_DAY};

use crate::error::ServiceError;
use crate::pipeline::MinuteAggregate;

const REGISTRY_FILE: &str = "registry.toml";

/// Camera ids double as directory names, so they are restricted to a safe alphabet.
pub fn valid_camera_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn day_name(day: i64) -> String {
    DateTime::from_timestamp(day * 86_400, 0)
        .map(|d| d.date_naive().to_string())
        .unwrap_or_else(|| format!("day{day}"))
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn segment(&self, camera_id: &str, day: i64) -> PathBuf {
        self.root.join(camera_id).join(format!("{}.jsonl", day_name(day)))
    }

    pub fn append(&self, aggregates: &[MinuteAggregate]) -> Result<(), ServiceError> {
        let mut i = 0;
        while i < aggregates.len() {
            let first = &aggregates[i];
            let day = day_of(first.minute_start_ts);
            let mut j = i;
            while j < aggregates.len()
                && aggregates[j].camera_id == first.camera_id
                && day_of(aggregates[j].minute_start_ts) == day
            {
                j += 1;
            }
            let path = self.segment(&first.camera_id, day);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut buf = Vec::new();
            for a in &aggregates[i..j] {
                serde_json::to_writer(&mut buf, a).map_err(std::io::Error::from)?;
                buf.push(b'\n');
            }
            OpenOptions::new().create(true).append(true).open(path)?.write_all(&buf)?;
            i = j;
        }
        Ok(())
    }

    /// Aggregates with `from <= minute_start_ts < to`, in time order.
    pub fn read_range(&self, camera_id: &str, from: Option<i64>, to: Option<i64>) -> Result<Vec<MinuteAggregate>, ServiceError> {
        let dir = self.root.join(camera_id);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut days: Vec<(String, PathBuf)> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p.clone())))
            .collect();
        days.sort();
        let lo = from.map(|t| day_name(day_of(t)));
        let hi = to.map(|t| day_name(day_of(t - 1)));
        let mut out = Vec::new();
        for (name, path) in days {
            if lo.as_ref().is_some_and(|l| name < *l) || hi.as_ref().is_some_and(|h| name > *h) {
                continue;
            }
            for (n, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let a: MinuteAggregate = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                if from.is_none_or(|f| a.minute_start_ts >= f) && to.is_none_or(|t| a.minute_start_ts < t) {
                    out.push(a);
                }
            }
        }
        out.sort_by_key(|a| a.minute_start_ts);
        Ok(out)
    }

    /// Last `days` days of aggregates ending with the day of `until_ts`.
    pub fn read_days(&self, camera_id: &str, until_ts: i64, days: u32) -> Result<(i64, Vec<MinuteAggregate>), ServiceError> {
        let last_day = day_of(until_ts);
        let first_day = last_day - days as i64 + 1;
        let rows = self.read_range(camera_id, Some(first_day * MS_PER_DAY), Some((last_day + 1) * MS_PER_DAY))?;
        Ok((first_day, rows))
    }

    pub fn load_registry(&self) -> Result<Vec<CameraRecord>, ServiceError> {
        let path = self.root.join(REGISTRY_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        parse_camera_registry(&fs::read_to_string(path)?).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    pub fn save_registry(&self, cameras: &[CameraRecord]) -> Result<(), ServiceError> {
        let text = serialize_camera_registry(cameras).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let tmp = self.root.join(format!("{REGISTRY_FILE}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(tmp, self.root.join(REGISTRY_FILE))?;
        Ok(())
    }
}
