//! Multi-camera orchestration on top of the core engine: per-camera streaming
//! pipelines, per-minute storage, keyword search and an HTTP/SSE API.

pub mod api;
pub mod error;
pub mod pipeline;
pub mod query;
pub mod state;
pub mod store;

pub use api::{router, serve};
pub use error::ServiceError;
pub use pipeline::{CameraPipeline, CameraStatus, MinuteAggregate, PipelineConfig, QueueSeverity, ServiceEvent};
pub use state::{AppState, ServiceConfig};
