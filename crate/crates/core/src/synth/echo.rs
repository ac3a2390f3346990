use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::signal::{Waveform, SAMPLE_RATE};

/// Distortion applied to a synthetic echo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    #[default]
    None,
    /// Hard clip at four times the RMS of the convolved signal.
    Clip,
    /// Fixed gain, drawn from [0.1, 0.5] by the sampler.
    Attenuate { gain: f64 },
}

pub const CLIP_RMS_FACTOR: f64 = 4.0;
pub const ATTENUATION_RANGE: (f64, f64) = (0.1, 0.5);

/// Linear convolution truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    if h.len() <= 64 {
        return (0..x.len())
            .map(|n| h.iter().take(n + 1).enumerate().map(|(k, hk)| hk * x[n - k]).sum())
            .collect();
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}

/// Far-end signal through the echo path: convolution with `rir`, an integer
/// sample delay, then the optional distortion. Output length equals input.
pub fn synth_echo(farend: &Waveform, rir: &[f64], delay_s: f64, distortion: Distortion) -> Waveform {
    let convolved = fft_convolve(&farend.samples, rir);
    let delay = (delay_s.max(0.0) * SAMPLE_RATE as f64).round() as usize;
    let n = convolved.len();
    let mut out = vec![0.0; n];
    if delay < n {
        out[delay..].copy_from_slice(&convolved[..n - delay]);
    }
    match distortion {
        Distortion::None => {}
        Distortion::Clip => {
            let rms = (convolved.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
            let limit = CLIP_RMS_FACTOR * rms;
            out.iter_mut().for_each(|v| *v = v.clamp(-limit, limit));
        }
        Distortion::Attenuate { gain } => out.iter_mut().for_each(|v| *v *= gain),
    }
    Waveform {
        samples: out,
        sample_rate: farend.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(len: usize) -> Waveform {
        Waveform::from_samples((0..len).map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin()).collect())
    }

    #[test]
    fn unit_impulse_is_identity() {
        let x = sine(1000);
        let y = synth_echo(&x, &[1.0], 0.0, Distortion::None);
        assert_eq!(x, y);
        // Long kernels go through the FFT path.
        let mut h = vec![0.0; 200];
        h[0] = 1.0;
        let y = synth_echo(&x, &h, 0.0, Distortion::None);
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn half_second_delay() {
        let x = sine(16000);
        let y = synth_echo(&x, &[1.0], 0.5, Distortion::None);
        assert!(y.samples[..8000].iter().all(|&v| v == 0.0));
        assert_eq!(&y.samples[8000..], &x.samples[..8000]);
    }

    #[test]
    fn fft_and_direct_convolution_agree() {
        let x: Vec<f64> = (0..500).map(|n| ((n * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let h: Vec<f64> = (0..100).map(|k| (-(k as f64) / 20.0).exp() * if k % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let fast = fft_convolve(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn clipping_bound() {
        // A sinusoid's crest factor is below four, so it passes untouched and
        // stays inside 4 * RMS = 2.828.
        let x = sine(16000);
        let y = synth_echo(&x, &[1.0], 0.0, Distortion::Clip);
        let bound = 4.0 / 2f64.sqrt();
        assert!(y.samples.iter().all(|v| v.abs() <= bound + 1e-12));
        assert_eq!(x, y);

        // A peaky signal (sinusoid plus impulses) is flattened at 4 * RMS.
        let mut peaky = x.samples.clone();
        for n in (0..peaky.len()).step_by(1000) {
            peaky[n] += 30.0;
        }
        let peaky = Waveform::from_samples(peaky);
        let rms = (peaky.energy() / peaky.len() as f64).sqrt();
        let y = synth_echo(&peaky, &[1.0], 0.0, Distortion::Clip);
        let limit = 4.0 * rms;
        assert!(y.samples.iter().all(|v| v.abs() <= limit + 1e-12));
        let flat = y.samples.iter().filter(|v| (v.abs() - limit).abs() < 1e-12).count();
        assert!(flat >= 16, "{flat} clipped samples");
    }

    #[test]
    fn attenuation() {
        let x = sine(100);
        let y = synth_echo(&x, &[1.0], 0.0, Distortion::Attenuate { gain: 0.25 });
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a * 0.25 - b).abs() < 1e-15);
        }
    }
}
