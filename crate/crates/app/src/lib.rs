//! IO, file formats, and experiment orchestration around `anerf-core`.
//!
//! * [`scene_file`] — the TOML scene description and built-in presets.
//! * [`image_io`] — PNG output, raw float32 dumps, and variance maps.
//! * [`checkpoint`] — the binary model/optimizer container.
//! * [`cache_io`] — posterior-cache serialization.
//! * [`report`] — metrics, timing, acquisition, and training-log CSVs.
//! * [`transforms`] — ingestion of `transforms.json` camera manifests.
//! * [`config`] — the experiment configuration file and defaults.
//! * [`experiment`] — the train / score / capture / update loop.

pub mod cache_io;
pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod image_io;
pub mod report;
pub mod scene_file;
pub mod transforms;

pub use config::{CaptureMode, ExperimentConfig, Mode};
pub use experiment::{run_experiment, RunSummary};
pub use report::{AcquisitionRow, MetricRecord};
