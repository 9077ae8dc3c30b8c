//! Shared service state: camera registry, per-camera pipelines, storage and the event bus.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use trafficmon::anomaly::AnomalyEvent;
use trafficmon::ingest::{CameraRecord, FrameDetections};
use trafficmon::queue::{severity_heatmap, QueueSample, SeverityHeatmap};

use crate::error::ServiceError;
use crate::pipeline::{CameraPipeline, CameraStatus, PipelineConfig, PipelineOutput, ServiceEvent};
use crate::query::{fold_history, query_cameras, HistoryPoint, QueryResult, Resolution};
use crate::store::{valid_camera_id, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub storage_root: PathBuf,
    pub pipeline: PipelineConfig,
    /// Events buffered per subscriber; slow subscribers lose the oldest ones.
    pub event_buffer: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            storage_root: PathBuf::from("trafficmon-data"),
            pipeline: PipelineConfig::default(),
            event_buffer: 1024,
        }
    }
}

struct CameraHandle {
    pipeline: Mutex<CameraPipeline>,
    last_arrival: Mutex<Option<Instant>>,
}

struct Inner {
    cfg: ServiceConfig,
    store: Store,
    cameras: RwLock<BTreeMap<String, Arc<CameraHandle>>>,
    events: broadcast::Sender<ServiceEvent>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the storage root and restores cameras from its registry.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let store = Store::open(&cfg.storage_root)?;
        let (events, _) = broadcast::channel(cfg.event_buffer.max(1));
        let state = Self {
            inner: Arc::new(Inner { store, cameras: RwLock::new(BTreeMap::new()), events, cfg }),
        };
        for record in state.inner.store.load_registry()? {
            state.insert(record)?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    fn insert(&self, record: CameraRecord) -> Result<(), ServiceError> {
        if !valid_camera_id(&record.camera_id) {
            return Err(ServiceError::BadRequest(format!("invalid camera id {:?}", record.camera_id)));
        }
        let mut cams = self.inner.cameras.write().expect("camera map poisoned");
        if cams.contains_key(&record.camera_id) {
            return Err(ServiceError::Conflict(format!("camera {} already registered", record.camera_id)));
        }
        let id = record.camera_id.clone();
        let pipeline = CameraPipeline::new(record, self.inner.cfg.pipeline.clone())?;
        cams.insert(id, Arc::new(CameraHandle { pipeline: Mutex::new(pipeline), last_arrival: Mutex::new(None) }));
        Ok(())
    }

    /// Registers a camera and persists the registry.
    pub fn register(&self, mut record: CameraRecord) -> Result<CameraStatus, ServiceError> {
        if record.name.is_empty() {
            record.name = record.camera_id.clone();
        }
        let id = record.camera_id.clone();
        self.insert(record)?;
        self.inner.store.save_registry(&self.records())?;
        tracing::info!(camera = %id, "camera registered");
        self.status(&id)
    }

    pub fn records(&self) -> Vec<CameraRecord> {
        let cams = self.inner.cameras.read().expect("camera map poisoned");
        cams.values().map(|h| h.pipeline.lock().expect("pipeline poisoned").record().clone()).collect()
    }

    fn handle(&self, id: &str) -> Result<Arc<CameraHandle>, ServiceError> {
        self.inner
            .cameras
            .read()
            .expect("camera map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("camera {id}")))
    }

    fn handles(&self) -> Vec<Arc<CameraHandle>> {
        self.inner.cameras.read().expect("camera map poisoned").values().cloned().collect()
    }

    pub fn list(&self) -> Vec<CameraStatus> {
        self.handles().iter().map(|h| h.pipeline.lock().expect("pipeline poisoned").status().clone()).collect()
    }

    pub fn status(&self, id: &str) -> Result<CameraStatus, ServiceError> {
        Ok(self.handle(id)?.pipeline.lock().expect("pipeline poisoned").status().clone())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceEvent> {
        self.inner.events.subscribe()
    }

    fn publish(&self, out: PipelineOutput) -> Result<(), ServiceError> {
        self.inner.store.append(&out.aggregates)?;
        for ev in out.events {
            // No subscribers is not an error.
            let _ = self.inner.events.send(ev);
        }
        Ok(())
    }

    fn with_pipeline<F>(&self, id: &str, f: F) -> Result<(), ServiceError>
    where
        F: FnOnce(&mut CameraPipeline, &mut PipelineOutput) -> Result<(), ServiceError>,
    {
        let handle = self.handle(id)?;
        *handle.last_arrival.lock().expect("arrival poisoned") = Some(Instant::now());
        let mut out = PipelineOutput::default();
        let result = {
            let mut p = handle.pipeline.lock().expect("pipeline poisoned");
            f(&mut p, &mut out)
        };
        // Whatever was produced before a bad record is still published.
        self.publish(out)?;
        result
    }

    /// Feeds detection frames to a camera; stops at the first rejected frame.
    pub fn ingest_frames(&self, id: &str, frames: &[FrameDetections]) -> Result<usize, ServiceError> {
        let mut n = 0;
        self.with_pipeline(id, |p, out| {
            for f in frames {
                let o = p.push_frame(f)?;
                out.events.extend(o.events);
                out.aggregates.extend(o.aggregates);
                n += 1;
            }
            Ok(())
        })?;
        Ok(n)
    }

    pub fn ingest_queue(&self, id: &str, samples: &[QueueSample]) -> Result<usize, ServiceError> {
        let mut n = 0;
        self.with_pipeline(id, |p, out| {
            for s in samples {
                let o = p.push_queue_sample(s)?;
                out.events.extend(o.events);
                out.aggregates.extend(o.aggregates);
                n += 1;
            }
            Ok(())
        })?;
        Ok(n)
    }

    /// Ends a camera's stream, flushing open tracks and the current minute.
    pub fn finish(&self, id: &str) -> Result<(), ServiceError> {
        self.with_pipeline(id, |p, out| {
            *out = p.finish();
            Ok(())
        })
    }

    pub fn history(&self, id: &str, from: Option<i64>, to: Option<i64>, res: Resolution) -> Result<Vec<HistoryPoint>, ServiceError> {
        self.handle(id)?;
        Ok(fold_history(&self.inner.store.read_range(id, from, to)?, res))
    }

    /// Severity heatmap of the last `days` days of stored data, classified with the
    /// camera's current thresholds.
    pub fn heatmap(&self, id: &str, days: u32) -> Result<SeverityHeatmap, ServiceError> {
        if days == 0 || days > 366 {
            return Err(ServiceError::BadRequest("days must be in 1..=366".into()));
        }
        let (th, until) = {
            let handle = self.handle(id)?;
            let p = handle.pipeline.lock().expect("pipeline poisoned");
            (p.thresholds().copied(), p.status().last_update_ts)
        };
        let th = th.ok_or_else(|| ServiceError::Conflict(format!("camera {id} has no severity thresholds yet")))?;
        let until = until.ok_or_else(|| ServiceError::Conflict(format!("camera {id} has no data")))?;
        let (first_day, rows) = self.inner.store.read_days(id, until, days)?;
        let samples: Vec<QueueSample> = rows
            .iter()
            .filter_map(|a| {
                a.mean_pl.map(|pl| QueueSample {
                    camera_id: a.camera_id.clone(),
                    timestamp_ms: a.minute_start_ts,
                    pixel_length: pl,
                    mask_id: None,
                })
            })
            .collect();
        severity_heatmap(&samples, &th, first_day, days as usize, self.inner.cfg.pipeline.thresholds.bin_minutes)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    /// Confirmed anomalies across cameras; `active_only` keeps the ongoing ones.
    pub fn anomalies(&self, active_only: bool) -> Vec<AnomalyEvent> {
        let mut out: Vec<AnomalyEvent> = Vec::new();
        for h in self.handles() {
            let p = h.pipeline.lock().expect("pipeline poisoned");
            let evs = if active_only { p.active_anomalies() } else { p.alerted_anomalies() };
            out.extend(evs.into_iter().cloned());
        }
        out.sort_by(|a, b| a.start_ts_ms.cmp(&b.start_ts_ms).then_with(|| a.camera_id.cmp(&b.camera_id)));
        out
    }

    pub fn query(&self, q: &str) -> QueryResult {
        query_cameras(&self.list(), q)
    }

    /// Flags cameras with no input for longer than the stale timeout (wall clock)
    /// and publishes the resulting status changes.
    pub fn sweep_stale(&self, now: Instant) {
        let timeout = Duration::from_millis(self.inner.cfg.pipeline.stale_timeout_ms.max(0) as u64);
        for h in self.handles() {
            let Some(last) = *h.last_arrival.lock().expect("arrival poisoned") else {
                continue;
            };
            let stale = now.saturating_duration_since(last) > timeout;
            let ev = h.pipeline.lock().expect("pipeline poisoned").set_stale(stale);
            if let Some(ev) = ev {
                let _ = self.inner.events.send(ev);
            }
        }
    }

    /// Runs `sweep_stale` periodically until the runtime shuts down.
    pub fn spawn_stale_watchdog(&self, period: Duration) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                state.sweep_stale(Instant::now());
            }
        })
    }
}
