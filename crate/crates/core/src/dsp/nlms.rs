use ndarray::Array2;
use num_complex::Complex64;

use super::DspConfig;
use crate::error::{PaecError, Result};
use crate::signal::{istft, stft_default, Spectrogram, Waveform};

/// Per-bin multi-frame NLMS filter state. One instance serves one stream.
#[derive(Debug, Clone)]
pub struct NlmsState {
    /// `(bins, taps)`; tap 0 multiplies the current reference frame.
    taps: Array2<Complex64>,
    /// Reference history in the same layout as `taps`.
    history: Array2<Complex64>,
    mu: f64,
    epsilon: f64,
}

impl NlmsState {
    pub fn new(n_bins: usize, cfg: &DspConfig) -> Result<Self> {
        if cfg.taps_per_bin == 0 {
            return Err(PaecError::param("taps_per_bin must be positive"));
        }
        if !(cfg.mu >= 0.0 && cfg.epsilon > 0.0) {
            return Err(PaecError::param("mu must be >= 0 and epsilon > 0"));
        }
        Ok(Self {
            taps: Array2::zeros((n_bins, cfg.taps_per_bin)),
            history: Array2::zeros((n_bins, cfg.taps_per_bin)),
            mu: cfg.mu,
            epsilon: cfg.epsilon,
        })
    }

    pub fn taps(&self) -> &Array2<Complex64> {
        &self.taps
    }

    /// Filters one frame and adapts. Returns the linear echo estimate per bin
    /// and writes the error into `err`.
    pub fn step(&mut self, mic: &[Complex64], reference: &[Complex64], echo: &mut [Complex64], err: &mut [Complex64]) {
        let n_taps = self.taps.ncols();
        for k in 0..self.taps.nrows() {
            let mut hist = self.history.row_mut(k);
            for j in (1..n_taps).rev() {
                hist[j] = hist[j - 1];
            }
            hist[0] = reference[k];
            let taps = self.taps.row(k);
            let y: Complex64 = taps.iter().zip(hist.iter()).map(|(w, x)| w * x).sum();
            let e = mic[k] - y;
            echo[k] = y;
            err[k] = e;
            let power: f64 = hist.iter().map(|x| x.norm_sqr()).sum();
            let scale = self.mu / (self.epsilon + power);
            let hist = self.history.row(k);
            let mut taps = self.taps.row_mut(k);
            for (w, x) in taps.iter_mut().zip(hist.iter()) {
                *w += x.conj() * e * scale;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlmsOutput {
    /// Linear echo estimate.
    pub y_lin: Waveform,
    /// Error signal `mic - y_lin`.
    pub e: Waveform,
}

/// Runs the subband NLMS over a whole utterance.
///
/// Both outputs have the microphone's length; the error signal is formed in
/// the time domain so that `y_lin + e == mic`.
pub fn nlms_run(mic: &Waveform, aligned_ref: &Waveform, cfg: &DspConfig) -> Result<NlmsOutput> {
    if mic.len() != aligned_ref.len() {
        return Err(PaecError::shape(format!(
            "mic has {} samples, reference {}",
            mic.len(),
            aligned_ref.len()
        )));
    }
    let d = stft_default(mic)?;
    let x = stft_default(aligned_ref)?;
    let mut state = NlmsState::new(d.n_bins(), cfg)?;
    let mut echo = Spectrogram::zeros(d.frames(), d.frame_len, d.hop, d.fft_size);
    let mut err = vec![Complex64::new(0.0, 0.0); d.n_bins()];
    for t in 0..d.frames() {
        let mic_row = d.bins.row(t).to_vec();
        let ref_row = x.bins.row(t).to_vec();
        let mut y_row = vec![Complex64::new(0.0, 0.0); d.n_bins()];
        state.step(&mic_row, &ref_row, &mut y_row, &mut err);
        echo.bins.row_mut(t).iter_mut().zip(y_row).for_each(|(o, v)| *o = v);
    }
    let y_lin = istft(&echo)?.fit_to(mic.len());
    let e = Waveform {
        samples: mic
            .samples
            .iter()
            .zip(&y_lin.samples)
            .map(|(m, y)| m - y)
            .collect(),
        sample_rate: mic.sample_rate,
    };
    Ok(NlmsOutput { y_lin, e })
}
