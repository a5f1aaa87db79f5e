//! Core library for far-field speaker verification experiments: feature
//! extraction, dereverberation, i-vector and neural embedders, back-end
//! scoring, score normalization, calibration and evaluation metrics.

pub mod audio;
pub mod augment;
pub mod backend;
pub mod dereverb;
pub mod dsp;
pub mod embedder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod gmm;
pub mod io;
pub mod pipeline;
pub mod score_norm;
pub mod trials;

pub use audio::AudioBuffer;
pub use error::{FsvError, Result};
pub use pipeline::{run_pipeline, ExperimentConfig, ExperimentReport};
