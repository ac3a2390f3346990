use super::DspConfig;
use crate::error::{PaecError, Result};
use crate::signal::{stft_default, Waveform, HOP, SAMPLE_RATE};

/// Mean-square level below which the reference counts as absent.
const SILENT_REFERENCE_MS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub delay_samples: usize,
    /// Mean normalized cross-correlation at the chosen lag, clamped to [0, 1].
    pub confidence: f64,
}

impl DelayEstimate {
    pub const NONE: DelayEstimate = DelayEstimate {
        delay_samples: 0,
        confidence: 0.0,
    };
}

/// [`estimate_delay_with`] using the default front-end settings.
pub fn estimate_delay(mic: &Waveform, reference: &Waveform) -> Result<DelayEstimate> {
    estimate_delay_with(mic, reference, &DspConfig::default())
}

fn band_envelopes(wave: &Waveform, bands: usize) -> Result<Vec<Vec<f64>>> {
    let spec = stft_default(wave)?;
    let n_bins = spec.n_bins();
    let mut env = vec![vec![0.0; spec.frames()]; bands];
    for (t, row) in spec.bins.rows().into_iter().enumerate() {
        for (b, e) in env.iter_mut().enumerate() {
            let lo = b * n_bins / bands;
            let hi = (b + 1) * n_bins / bands;
            e[t] = (lo..hi).map(|k| row[k].norm()).sum();
        }
    }
    Ok(env)
}

/// Normalized cross-correlation of `m[t]` against `r[t - lag]`.
fn ncc(m: &[f64], r: &[f64], lag: usize) -> Option<f64> {
    let n = m.len().min(r.len() + lag);
    if n <= lag + 1 {
        return None;
    }
    let ms = &m[lag..n];
    let rs = &r[..n - lag];
    let len = ms.len() as f64;
    let mm = ms.iter().sum::<f64>() / len;
    let rm = rs.iter().sum::<f64>() / len;
    let (mut num, mut vm, mut vr) = (0.0, 0.0, 0.0);
    for (a, b) in ms.iter().zip(rs) {
        let (a, b) = (a - mm, b - rm);
        num += a * b;
        vm += a * a;
        vr += b * b;
    }
    let den = (vm * vr).sqrt();
    (den > 1e-12).then(|| num / den)
}

/// Estimates the bulk delay of the echo in `mic` relative to `reference`.
///
/// Each subband's magnitude envelope is cross-correlated over frame lags
/// covering the search range; the correlations are averaged across bands and
/// the best lag is converted to samples.
pub fn estimate_delay_with(
    mic: &Waveform,
    reference: &Waveform,
    cfg: &DspConfig,
) -> Result<DelayEstimate> {
    for w in [mic, reference] {
        if w.duration_s() < 1.0 {
            return Err(PaecError::Duration {
                needed_s: 1.0,
                got_s: w.duration_s(),
            });
        }
    }
    if cfg.tde_bands == 0 {
        return Err(PaecError::param("tde_bands must be positive"));
    }
    if reference.energy() / (reference.len() as f64) < SILENT_REFERENCE_MS {
        return Ok(DelayEstimate::NONE);
    }
    let max_lag = (cfg.tde_search_ms / 1000.0 * SAMPLE_RATE as f64 / HOP as f64).round() as usize;
    let m_env = band_envelopes(mic, cfg.tde_bands)?;
    let r_env = band_envelopes(reference, cfg.tde_bands)?;
    let mut best = DelayEstimate::NONE;
    let mut best_score = f64::NEG_INFINITY;
    for lag in 0..=max_lag {
        let (sum, count) = m_env
            .iter()
            .zip(&r_env)
            .filter_map(|(m, r)| ncc(m, r, lag))
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == 0 {
            continue;
        }
        let score = sum / cfg.tde_bands as f64;
        if score > best_score {
            best_score = score;
            best = DelayEstimate {
                delay_samples: lag * HOP,
                confidence: score.clamp(0.0, 1.0),
            };
        }
    }
    Ok(best)
}

/// Delays `reference` by the estimated amount, zero-filling the head and
/// keeping the original length.
pub fn align_reference(reference: &Waveform, delay: &DelayEstimate) -> Waveform {
    let n = reference.len();
    let shift = delay.delay_samples.min(n);
    let mut samples = vec![0.0; n];
    samples[shift..].copy_from_slice(&reference.samples[..n - shift]);
    Waveform {
        samples,
        sample_rate: reference.sample_rate,
    }
}
