//! Time-frequency analysis and synthesis, power-law compression, and the
//! energy-ratio arithmetic used to mix scenes and score outputs.

pub(crate) mod compress;
mod mixing;
mod stft;
pub mod wav;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{PaecError, Result};

pub use compress::{power_compress, power_decompress, CompressedSpectrogram};
pub use mixing::{compute_ser, energy, gain_for_ser, gain_for_snr};
pub use stft::{istft, stft, stft_default, sqrt_hann};

/// All internal processing runs at this rate.
pub const SAMPLE_RATE: u32 = 16_000;
/// 20 ms analysis window.
pub const FRAME_LEN: usize = 320;
/// 10 ms hop.
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 320;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// Mono audio at a known sample rate. Amplitudes are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(PaecError::param(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// A 16 kHz waveform. Panics on non-finite input; use [`Waveform::new`]
    /// for untrusted data.
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self::new(samples, SAMPLE_RATE).expect("finite samples")
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_samples(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Truncates or zero-pads to `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn require_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(PaecError::SampleRate {
                expected: SAMPLE_RATE,
                found: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Complex time-frequency grid indexed `(frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Spectrogram {
    pub fn zeros(frames: usize, frame_len: usize, hop: usize, fft_size: usize) -> Self {
        Self {
            bins: Array2::zeros((frames, fft_size / 2 + 1)),
            frame_len,
            hop,
            fft_size,
        }
    }

    /// Zero spectrogram with the default 20 ms / 10 ms / 320-point layout.
    pub fn zeros_default(frames: usize) -> Self {
        Self::zeros(frames, FRAME_LEN, HOP, FFT_SIZE)
    }

    pub fn from_bins(bins: Array2<Complex64>) -> Self {
        Self {
            bins,
            frame_len: FRAME_LEN,
            hop: HOP,
            fft_size: FFT_SIZE,
        }
    }

    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.ncols()
    }

    /// Number of samples produced by overlap-add synthesis.
    pub fn synthesis_len(&self) -> usize {
        match self.frames() {
            0 => 0,
            t => (t - 1) * self.hop + self.frame_len,
        }
    }

    pub fn same_layout(&self, other: &Spectrogram) -> bool {
        self.bins.dim() == other.bins.dim()
            && self.frame_len == other.frame_len
            && self.hop == other.hop
            && self.fft_size == other.fft_size
    }
}

/// Number of full frames the default framing extracts from `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        (len - FRAME_LEN) / HOP + 1
    }
}
