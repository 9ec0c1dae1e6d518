//! Leaf-fall prediction pipeline.
//!
//! The crate ingests ground-truth phenology observations, reanalysis weather
//! and vegetation-index rasters, assembles daily per-tree feature series,
//! trains a sliding-window LSTM binary classifier (optionally tuned with
//! Hyperband), and evaluates predictions with a classification report and
//! start/end-of-leaf-fall RMSE. A synthetic data generator produces
//! schema-compatible datasets with known ground truth for end-to-end tests.
//!
//! The `leafcast` binary exposes the pipeline as subcommands; see the crate
//! README for usage.

pub mod calendar;
pub mod config;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod seeding;
pub mod synth;
pub mod tune;

pub use config::RunConfig;
pub use pipeline::PipelineError;
