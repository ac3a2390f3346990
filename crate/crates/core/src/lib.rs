//! Hybrid personalized acoustic echo cancellation.
//!
//! A linear front-end (subband time-delay estimation plus a subband NLMS
//! filter) produces the error signal `e` and the linear echo estimate `y`.
//! These, together with the microphone signal `d` and an enrollment
//! utterance of the target talker, feed a gated convolutional F-T-LSTM
//! post-filter that runs in one or two stages.
//!
//! The crate also contains the data-synthesis pipeline, the training losses
//! and strategies, the evaluation metrics, and the `paec` command-line tool.

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod signal;
pub mod speaker;
pub mod synth;
pub mod train;

pub use error::{PaecError, Result};
pub use signal::{CompressedSpectrogram, Spectrogram, Waveform, SAMPLE_RATE};
