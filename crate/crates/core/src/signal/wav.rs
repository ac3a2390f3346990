//! WAV ingestion and output.
//!
//! Input accepts mono 16-bit PCM (and 32-bit float) at any rate; other rates
//! are resampled to 16 kHz. Stereo is rejected. Dataset components are
//! written as 32-bit float so mixtures stay additive after a round trip.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{PaecError, Result};

fn wav_err(path: &Path, msg: impl ToString) -> PaecError {
    PaecError::Wav {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads a mono WAV file and resamples it to 16 kHz if needed.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("{} channels; only mono input is supported", spec.channels),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported sample format {fmt:?} with {bits} bits"),
            ))
        }
    };
    let wave = Waveform::new(samples, spec.sample_rate).map_err(|e| wav_err(path, e))?;
    if spec.sample_rate != SAMPLE_RATE {
        log::info!(
            "resampling {} from {} Hz to {} Hz",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        );
        return Ok(resample(&wave, SAMPLE_RATE));
    }
    Ok(wave)
}

/// Writes 32-bit float samples.
pub fn write_wav_f32(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        w.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// Writes 16-bit PCM, clipping to full scale.
pub fn write_wav_pcm16(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

const HALF_TAPS: i64 = 16;

/// Rational polyphase resampler with a Hann-windowed sinc kernel.
pub fn resample(wave: &Waveform, target_rate: u32) -> Waveform {
    if wave.sample_rate == target_rate || wave.is_empty() {
        return Waveform {
            samples: wave.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let g = gcd(wave.sample_rate, target_rate);
    let up = (target_rate / g) as i64;
    let down = (wave.sample_rate / g) as i64;
    // Cutoff relative to the input Nyquist.
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half = (HALF_TAPS as f64 / cutoff).ceil() as i64;
    let in_len = wave.len() as i64;
    let out_len = (in_len * up + down - 1) / down;
    // One kernel per output phase.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|ph| {
            let frac = ph as f64 / up as f64;
            (-half + 1..=half)
                .map(|k| {
                    let x = k as f64 - frac;
                    let arg = x * cutoff;
                    let sinc = if arg.abs() < 1e-12 {
                        1.0
                    } else {
                        (PI * arg).sin() / (PI * arg)
                    };
                    let win = 0.5 + 0.5 * (PI * x / (half as f64 + 1.0)).cos();
                    cutoff * sinc * win
                })
                .collect()
        })
        .collect();
    let samples = (0..out_len)
        .map(|m| {
            let pos = m * down;
            let base = pos / up;
            let kernel = &phases[(pos % up) as usize];
            kernel
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let idx = base - (-half + 1 + i as i64);
                    if (0..in_len).contains(&idx) {
                        h * wave.samples[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    Waveform {
        samples,
        sample_rate: target_rate,
    }
}
