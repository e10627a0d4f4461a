//! File formats, the experiment harness and report rendering on top of
//! `shortcut-core`.
//!
//! An experiment run produces this tree under its output directory:
//!
//! ```text
//! config.json                   resolved configuration
//! analysis.json                 everything the report is rendered from
//! runs/<config>/<s>_<i>/        checkpoint.spm, curves.csv, predictions.csv,
//!                               record.json, mean_heatmap.vol
//! heatmaps/<config>/            best-run test heatmaps (VOL1 + JSON sidecar),
//!                               mean.vol, cluster_<k>.vol
//! reports/                      performance, similarity, comparisons,
//!                               boundary focus, clustering and exclusion
//!                               tables; slices/*.pgm
//! ```

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
pub use experiment::{run_experiment, Analysis};
pub use report::render_report;
