//! Allocation-only numerics for detecting preprocessing-induced shortcut
//! learning in volumetric classifiers.
//!
//! The crate is `no_std` (with `alloc`) and contains every pure algorithm of
//! the pipeline:
//!
//! * [`net`]: a small deterministic 3D CNN engine (strided convolutions,
//!   dense layers, softmax), reverse-mode gradients and Adam with
//!   non-positive bias clamping.
//! * [`phantom`]: labelled synthetic head phantoms with separately
//!   controllable texture, morphology and boundary cues, plus subject-level
//!   stratified splitting.
//! * [`prep`]: white-matter-peak normalization, skull stripping and threshold
//!   binarization (the eight input configurations).
//! * [`relevance`]: LRP-αβ relevance propagation and top-relevance windowing.
//! * [`similarity`]: heatmap comparison measures (RMSE, Pearson, MSSIM, EMD,
//!   IoU).
//! * [`stats`]: classification metrics, exact McNemar tests, plain and
//!   discrete Holm step-down procedures, bootstrap summaries.
//! * [`spray`]: spectral relevance analysis (affinity graphs, normalized
//!   Laplacian spectra, eigengap, spectral clustering, t-SNE).
//!
//! File formats, orchestration and the command line live in the companion
//! `shortcut-lab` crate.
#![no_std]

extern crate alloc;

mod error;
pub mod net;
pub mod phantom;
pub mod prep;
pub mod real;
pub mod record;
pub mod relevance;
pub mod seed;
pub mod similarity;
pub mod spray;
pub mod stats;
mod volume;

pub use error::{Error, Result};
pub use real::Real;
pub use record::{Class, Prediction, RunRecord};
pub use volume::{Dims, Volume};
