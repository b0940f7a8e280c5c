//! Sound event detection with a regression output head.
//!
//! Instead of classifying every spectrogram frame, the network here emits a
//! coarse grid of time steps where each step carries, per acoustic class, a
//! presence score plus normalized start/stop boundaries. Decoding that grid
//! and merging adjacent blocks yields event lists directly, which keeps
//! post-processing cheap.
//!
//! Modules follow the pipeline order: [`audio`] decodes and resamples WAV
//! files, [`features`] turns them into log-mel spectrograms, [`net`] holds
//! the convolutional network and training engine, [`labels`] converts
//! between event lists and the regression grid, [`loss`] scores predictions,
//! [`smooth`] cleans decoded events, [`metrics`] implements segment-based
//! evaluation, [`datagen`] synthesizes labelled audio, and [`pipeline`] ties
//! everything together for the CLI.

pub mod audio;
pub mod datagen;
pub mod error;
pub mod features;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod profiles;
pub mod smooth;

pub use error::{Error, Result};
