use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Spectrogram, Waveform, FFT_SIZE, FRAME_LEN, HOP};
use crate::error::{PaecError, Result};

/// Periodic square-root Hann window. Its square sums to one at 50% overlap.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
        .collect()
}

fn check_params(frame_len: usize, hop: usize, fft_size: usize) -> Result<()> {
    if frame_len == 0 || hop == 0 || fft_size == 0 {
        return Err(PaecError::param("frame_len, hop and fft_size must be positive"));
    }
    if frame_len > fft_size {
        return Err(PaecError::param(format!(
            "frame_len {frame_len} exceeds fft_size {fft_size}"
        )));
    }
    if frame_len % hop != 0 {
        return Err(PaecError::param(format!(
            "hop {hop} does not divide frame_len {frame_len}"
        )));
    }
    Ok(())
}

/// Short-time Fourier transform with a square-root Hann analysis window.
///
/// Frames start at sample 0 with no centering; a trailing partial frame is
/// dropped, so frame `t` covers samples `[t * hop, t * hop + frame_len)`.
pub fn stft(wave: &Waveform, frame_len: usize, hop: usize, fft_size: usize) -> Result<Spectrogram> {
    check_params(frame_len, hop, fft_size)?;
    if wave.is_empty() {
        return Err(PaecError::EmptySignal("stft input"));
    }
    wave.require_rate()?;
    if wave.len() < frame_len {
        return Err(PaecError::EmptySignal("stft input shorter than one frame"));
    }
    let frames = (wave.len() - frame_len) / hop + 1;
    let n_bins = fft_size / 2 + 1;
    let window = sqrt_hann(frame_len);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut bins = Array2::<Complex64>::zeros((frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, w) in window.iter().enumerate() {
            buf[n].re = wave.samples[start + n] * w;
        }
        fft.process(&mut buf);
        for (k, v) in bins.row_mut(t).iter_mut().enumerate() {
            *v = buf[k];
        }
    }
    Ok(Spectrogram {
        bins,
        frame_len,
        hop,
        fft_size,
    })
}

/// [`stft`] with the 20 ms / 10 ms / 320-point layout used everywhere else.
pub fn stft_default(wave: &Waveform) -> Result<Spectrogram> {
    stft(wave, FRAME_LEN, HOP, FFT_SIZE)
}

/// Weighted overlap-add synthesis.
///
/// The output is divided by the accumulated squared window wherever that sum
/// is nonzero, so `stft(istft(X)) == X` for any `X` produced by [`stft`].
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    check_params(spec.frame_len, spec.hop, spec.fft_size)?;
    let n_bins = spec.fft_size / 2 + 1;
    if spec.n_bins() != n_bins {
        return Err(PaecError::param(format!(
            "spectrogram has {} bins, fft_size {} implies {n_bins}",
            spec.n_bins(),
            spec.fft_size
        )));
    }
    let frames = spec.frames();
    let len = spec.synthesis_len();
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let window = sqrt_hann(spec.frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(spec.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); spec.fft_size];
    let scale = 1.0 / spec.fft_size as f64;
    for t in 0..frames {
        let row = spec.bins.row(t);
        for k in 0..n_bins {
            buf[k] = row[k];
        }
        // Hermitian extension; DC and Nyquist imaginary parts are ignored.
        buf[0].im = 0.0;
        if spec.fft_size % 2 == 0 {
            buf[n_bins - 1].im = 0.0;
        }
        for k in n_bins..spec.fft_size {
            buf[k] = buf[spec.fft_size - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * spec.hop;
        for (n, w) in window.iter().enumerate() {
            out[start + n] += buf[n].re * scale * w;
            wsum[start + n] += w * w;
        }
    }
    for (x, w) in out.iter_mut().zip(&wsum) {
        if *w > 1e-10 {
            *x /= w;
        }
    }
    Ok(Waveform::from_samples(out))
}
