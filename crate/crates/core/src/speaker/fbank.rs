//! Log-mel filterbank statistics of an enrollment utterance.

use crate::error::{PaecError, Result};
use crate::signal::{stft, Waveform, FRAME_LEN, HOP, SAMPLE_RATE};

pub const N_MELS: usize = 80;
pub const FBANK_DIM: usize = 2 * N_MELS;
pub const MIN_ENROLLMENT_S: f64 = 1.0;
const LOG_FLOOR: f64 = 1e-10;
/// Frames are zero-padded so that the narrowest low-frequency mel filters
/// still cover at least one bin.
pub const FBANK_FFT: usize = 1024;
const FBANK_BINS: usize = FBANK_FFT / 2 + 1;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over 0 Hz to Nyquist, `N_MELS x FBANK_BINS`.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let nyq = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyq);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / FBANK_FFT as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..FBANK_BINS)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-frame log-mel energies, `frames x N_MELS`.
pub fn log_mel(wave: &Waveform) -> Result<Vec<[f64; N_MELS]>> {
    let spec = stft(wave, FRAME_LEN, HOP, FBANK_FFT)?;
    let bank = mel_filterbank();
    Ok(spec
        .bins
        .rows()
        .into_iter()
        .map(|row| {
            let power: Vec<f64> = row.iter().map(|c| c.norm_sqr()).collect();
            let mut out = [0.0; N_MELS];
            for (o, filt) in out.iter_mut().zip(&bank) {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                *o = (e + LOG_FLOOR).ln();
            }
            out
        })
        .collect())
}

/// Temporal mean (80) followed by temporal standard deviation (80) of the
/// log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FBankStats(pub Vec<f64>);

impl FBankStats {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn compute_fbank_stats(enrollment: &Waveform) -> Result<FBankStats> {
    enrollment.require_rate()?;
    if enrollment.duration_s() < MIN_ENROLLMENT_S {
        return Err(PaecError::Duration {
            needed_s: MIN_ENROLLMENT_S,
            got_s: enrollment.duration_s(),
        });
    }
    let frames = log_mel(enrollment)?;
    let n = frames.len() as f64;
    let mut mean = [0.0; N_MELS];
    for f in &frames {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut var = [0.0; N_MELS];
    for f in &frames {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let mut out = mean.to_vec();
    out.extend(var.iter().map(|v| v.sqrt()));
    Ok(FBankStats(out))
}

#[cfg(test)]
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::talker::Talker;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn white(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_samples((0..len).map(|_| rng.random_range(-0.3..0.3)).collect())
    }

    #[test]
    fn filterbank_covers_band() {
        let bank = mel_filterbank();
        assert_eq!(bank.len(), N_MELS);
        // Every filter has some support and every interior bin is covered.
        assert!(bank.iter().all(|f| f.iter().sum::<f64>() > 0.0));
        for k in 1..FBANK_BINS - 1 {
            assert!(bank.iter().map(|f| f[k]).sum::<f64>() > 0.0, "bin {k}");
        }
    }

    #[test]
    fn white_noise_stats() {
        let s = compute_fbank_stats(&white(32_000, 1)).unwrap();
        assert_eq!(s.0.len(), FBANK_DIM);
        assert!(s.0.iter().all(|v| v.is_finite()));
        assert!(s.0[N_MELS..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn looped_frame_has_zero_variance() {
        // A periodic signal with period equal to the hop gives identical
        // frames.
        let period = white(160, 2).samples;
        let samples: Vec<f64> = period.iter().cycle().take(32_000).copied().collect();
        let s = compute_fbank_stats(&Waveform::from_samples(samples)).unwrap();
        assert!(s.0[N_MELS..].iter().all(|&v| v.abs() < 1e-6), "{:?}", &s.0[N_MELS..]);
    }

    #[test]
    fn same_talker_is_closer() {
        let a = Talker::from_seed(10);
        let b = Talker::from_seed(11);
        let a1 = compute_fbank_stats(&a.utterance(3.0, 1)).unwrap();
        let a2 = compute_fbank_stats(&a.utterance(3.0, 2)).unwrap();
        let b1 = compute_fbank_stats(&b.utterance(3.0, 3)).unwrap();
        assert!(cosine(&a1.0, &a2.0) > cosine(&a1.0, &b1.0));
    }

    #[test]
    fn short_enrollment() {
        assert!(matches!(
            compute_fbank_stats(&white(15_999, 0)),
            Err(PaecError::Duration { .. })
        ));
    }
}
