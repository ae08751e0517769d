//! Undersampled 3D multi-flip-angle multi-echo GRE reconstruction.
//!
//! The crate covers the full desk-scale pipeline: synthetic multi-contrast
//! phantom scans, Poisson-disk retrospective undersampling, a cascaded CNN
//! with hard data-consistency layers (trained with a built-in reverse-mode
//! autodiff), parametric map fitting (T2*, field map, QSM), and image-quality
//! metrics.

pub mod cascade;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fourier;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod render;
pub mod sampling;
pub mod volume;

pub use error::{Error, Result};
