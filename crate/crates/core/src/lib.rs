//! Cuff-less arterial blood pressure (ABP) waveform synthesis from single-site
//! photoplethysmography (PPG).
//!
//! The crate is organised by pipeline stage:
//!
//! - [`dataio`]: records, the CSV and CLB1 file formats, synthetic corpora and splits.
//! - [`preprocess`]: low-pass filtering, artifact screening, wavelet baseline
//!   removal, cross-correlation alignment, segmentation and z-scoring.
//! - [`spectral`]: orthonormal DCT-II / DCT-III and coefficient truncation.
//! - [`fdreg`]: frequency-domain ridge and RBF kernel ridge regression.
//! - [`nn`]: a from-scratch encoder-decoder transformer with manual backprop and Adam.
//! - [`eval`]: waveform and SBP/DBP error statistics, AAMI and BHS grading.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod fdreg;
pub mod linalg;
pub mod nn;
pub mod preprocess;
pub mod spectral;

pub use error::{Error, Result};
