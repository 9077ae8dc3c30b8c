//! Traffic monitoring from per-frame object detections.
//!
//! Detections come from any upstream detector as line-oriented records
//! ([`ingest`]). From there the crate builds tracks ([`tracking`]), derives
//! speed, direction and road type ([`motion`]), flags stalled vehicles
//! ([`anomaly`]), counts line crossings ([`counting`]) and grades queue
//! lengths against adaptive thresholds ([`queue`]). [`evaluation`] scores
//! outputs against ground truth, typically produced by [`simulator`].
//!
//! Geometry and statistics kernels are generic over [`Scalar`] (`f32` or
//! `f64`); pipeline records use `f64`.

pub mod anomaly;
pub mod counting;
pub mod evaluation;
pub mod geometry;
pub mod ingest;
pub mod motion;
pub mod queue;
pub mod scalar;
pub mod simulator;
pub mod tracking;
pub mod types;

pub use geometry::{cosine_distance, iou, BBox, BitMask, GeometryError, Point2};
pub use scalar::Scalar;
pub use types::{ClassLabel, Detection, Direction, MaskShape, Track, TrackState};

pub type BoundingBox = BBox<f64>;
pub type Point = Point2<f64>;
pub type BoundingBox32 = BBox<f32>;
pub type Thresholds = queue::SeverityThresholds<f64>;
