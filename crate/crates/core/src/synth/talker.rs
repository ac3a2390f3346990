//! Synthetic talkers: a source-filter toy voice used to build corpora when no
//! recorded speech is available, and in tests.
//!
//! Each talker has its own pitch range, vocal-tract scale and spectral tilt,
//! so utterances of one talker share a long-term spectral envelope while
//! different talkers differ.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::signal::{Waveform, SAMPLE_RATE};

/// Reference RMS every source is normalized to before mixing (about -26 dBFS).
pub const NOMINAL_RMS: f64 = 0.05;

/// Formant frequencies (Hz) of a few vowels for an average adult tract.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Talker {
    pub f0: f64,
    /// Multiplies every formant frequency.
    pub tract_scale: f64,
    /// First-order pre-filter coefficient shaping the spectral tilt.
    pub tilt: f64,
    pub breathiness: f64,
}

impl Talker {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a1c_e5ee_d000_0001);
        Self {
            f0: rng.random_range(85.0..240.0),
            tract_scale: rng.random_range(0.82..1.22),
            tilt: rng.random_range(0.55..0.95),
            breathiness: rng.random_range(0.02..0.15),
        }
    }

    /// One utterance of roughly `seconds` length, normalized to [`NOMINAL_RMS`].
    pub fn utterance(&self, seconds: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = SAMPLE_RATE as f64;
        let total = (seconds * fs) as usize;
        let mut out = Vec::with_capacity(total);
        while out.len() < total {
            // Pause.
            let pause = (rng.random_range(0.05..0.25) * fs) as usize;
            out.extend(std::iter::repeat_n(0.0, pause.min(total - out.len())));
            if out.len() >= total {
                break;
            }
            let n = ((rng.random_range(0.12..0.32) * fs) as usize).min(total - out.len());
            let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
            let f0 = self.f0 * rng.random_range(0.9..1.12);
            let glide = rng.random_range(-0.15..0.15);
            out.extend(self.syllable(n, vowel, f0, glide, &mut rng));
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64).sqrt();
        let g = if rms > 0.0 { NOMINAL_RMS / rms } else { 0.0 };
        Waveform::from_samples(out.into_iter().map(|v| v * g).collect())
    }

    fn syllable(&self, n: usize, vowel: [f64; 3], f0: f64, glide: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let fs = SAMPLE_RATE as f64;
        let mut phase = 0.0;
        let mut prev = 0.0;
        let mut source = Vec::with_capacity(n);
        for i in 0..n {
            let frac = i as f64 / n as f64;
            let f = f0 * (1.0 + glide * frac);
            phase += f / fs;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let noise: f64 = rng.sample(StandardNormal);
            let x = pulse + self.breathiness * noise * 0.3;
            // Spectral tilt.
            let y = x + self.tilt * prev;
            prev = y;
            source.push(y);
        }
        let mut sig = source;
        for (k, base) in vowel.iter().enumerate() {
            let fc = (base * self.tract_scale).min(0.45 * fs);
            let bw = 60.0 + 40.0 * k as f64;
            sig = resonator(&sig, fc, bw);
        }
        // Raised-cosine syllable envelope.
        sig.iter()
            .enumerate()
            .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
            .collect()
    }
}

fn resonator(x: &[f64], fc: f64, bw: f64) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let r = (-PI * bw / fs).exp();
    let a1 = 2.0 * r * (2.0 * PI * fc / fs).cos();
    let a2 = -r * r;
    let g = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = g * v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Colored stationary noise, normalized to [`NOMINAL_RMS`].
pub fn colored_noise(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole: f64 = rng.random_range(0.0..0.97);
    let hum = rng.random_bool(0.3).then(|| rng.random_range(50.0..120.0));
    let mut prev = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|n| {
            let w: f64 = rng.sample(StandardNormal);
            prev = pole * prev + w;
            let h = hum.map_or(0.0, |f| 2.0 * (2.0 * PI * f * n as f64 / SAMPLE_RATE as f64).sin());
            prev + h
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= NOMINAL_RMS / rms);
    }
    Waveform::from_samples(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_normalized_and_deterministic() {
        let t = Talker::from_seed(3);
        let a = t.utterance(1.5, 10);
        assert_eq!(a.len(), 24000);
        let rms = (a.energy() / a.len() as f64).sqrt();
        assert!((rms - NOMINAL_RMS).abs() < 1e-9);
        assert_eq!(a, t.utterance(1.5, 10));
        assert_ne!(a, t.utterance(1.5, 11));
    }
}
