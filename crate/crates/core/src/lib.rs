//! Evacuation flow analysis from device location pings: ingestion, home
//! detection, evacuee and destination inference, OD tables, and a log-linear
//! direct-demand model.

pub mod error;
pub mod evac;
pub mod geo;
pub mod home;
pub mod ingest;
pub mod model;
pub mod od;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
pub use evac::{EvacParams, EvacZoneMap, EvacueeOutcome, EvacueeRecord, ParcelLayer, PointRole, ResidenceClass, StopRecord};
pub use geo::{GeoPoint, Grid, GridCell, Polygon};
pub use home::{HomeParams, HomeRecord};
pub use ingest::{IngestCounts, IngestParams, Ping, PingSchema, Trajectory};
pub use model::{CvReport, Design, FittedModel, Metrics, ModelFit, TransformSpec};
pub use od::{DesignRow, OdFlow, TractAttributes};
pub use pipeline::{run_pipeline, PipelineOutput, PipelineParams};
pub use spatial::TractIndex;
pub use time::{LocalClock, LocalDate, NightWindow, StormWindow};
